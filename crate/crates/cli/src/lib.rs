//! Command implementations behind the `lbras` binary.
//!
//! Exit codes: 0 PASS or completed run, 1 FAIL or counterexample found,
//! 2 invalid input (scenario, overrides, initial condition), 3 INCONCLUSIVE,
//! 4 any other runtime error.

pub mod scenario;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use lbras_core::{
    check_forward_invariance, check_pair_vb, check_ras, check_single_v, check_stability_safety,
    falsify, mg_equilibrium, run_closed_loop, solve, vector, BouncingBallParams, CheckReport,
    ConditionResult, HybridArc, MooreGreitzerParams, Vector, Verdict, Witness,
};
use serde_json::json;

pub use scenario::{Scenario, SetDecl};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

pub const CHECK_MODES: [&str; 5] = ["ras", "stability-safety", "single-v", "pair-vb", "invariance"];

/// Result of a command: exit code plus the one-line stdout summary.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub summary: String,
}

pub fn verdict_code(v: Verdict) -> i32 {
    match v {
        Verdict::Pass => EXIT_PASS,
        Verdict::Fail => EXIT_FAIL,
        Verdict::Inconclusive => EXIT_INCONCLUSIVE,
    }
}

/// Exit code and JSON payload for an error.
pub fn error_payload(err: &anyhow::Error) -> (i32, serde_json::Value) {
    let (code, kind) = match err.downcast_ref::<lbras_core::Error>() {
        Some(e) => {
            use lbras_core::Error as E;
            let code = match e {
                E::BadInitialCondition
                | E::Parse(_)
                | E::InvalidArgument(_)
                | E::DimensionMismatch { .. }
                | E::DegenerateDomain { .. }
                | E::MissingBarrier
                | E::MissingIndicator => EXIT_INPUT,
                _ => EXIT_RUNTIME,
            };
            (code, e.kind())
        }
        None if err.downcast_ref::<std::io::Error>().is_some() => (EXIT_RUNTIME, "Io"),
        None => (EXIT_INPUT, "InvalidInput"),
    };
    let chain: Vec<String> = err.chain().map(|c| c.to_string()).collect();
    (
        code,
        json!({ "error": kind, "message": chain.join(": "), "exit_code": code }),
    )
}

/// Writes `contents` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.flush()?;
    tmp.persist(dir.join(name))
        .map_err(|e| anyhow!(e.error))
        .with_context(|| format!("writing {}", dir.join(name).display()))?;
    Ok(())
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<()> {
    write_atomic(dir, name, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn seed_for(sc: &Scenario, mode: &str) -> Result<u64> {
    match sc.seed {
        Some(s) => Ok(s),
        None if sc.needs_seed(mode) => bail!("'{mode}' draws random samples; set seed or --seed"),
        None => Ok(0),
    }
}

pub fn cmd_simulate(sc: &Scenario, out: &Path) -> Result<Outcome> {
    seed_for(sc, "simulate")?;
    let r = sc.resolve()?;
    let rep = solve(&r.sys_delta, &r.x0, &r.sim)?;
    write_atomic(out, "arc.csv", &rep.arc.to_csv())?;
    write_json(out, "arc.json", &rep.arc.to_json())?;
    write_json(out, "solve_report.json", &rep.summary_json())?;
    Ok(Outcome {
        code: EXIT_PASS,
        summary: format!(
            "simulate: {} flow_time={:.6} jumps={} samples={}",
            rep.arc.termination,
            rep.flow_time,
            rep.jump_count,
            rep.arc.sample_count()
        ),
    })
}

pub fn run_check(sc: &Scenario, mode: &str) -> Result<CheckReport> {
    if !CHECK_MODES.contains(&mode) {
        bail!("unknown mode '{mode}' (expected one of {})", CHECK_MODES.join(", "));
    }
    let seed = seed_for(sc, mode)?;
    let r = sc.resolve()?;
    let cert = || r.cert.as_ref().ok_or_else(|| anyhow!("mode '{mode}' needs certificates"));
    Ok(match mode {
        "ras" => {
            let spec = r.ras.as_ref().ok_or_else(|| anyhow!("ras needs spec.x0, unsafe_set, target"))?;
            check_ras(&r.sys_delta, spec, r.n_init, r.n_dist, &r.sim, seed)
        }
        "stability-safety" => {
            let spec = r
                .stab
                .as_ref()
                .ok_or_else(|| anyhow!("stability-safety needs spec.x0, unsafe_set, attractor"))?;
            check_stability_safety(&r.sys_delta, spec, r.n_init, &r.sim, seed)
        }
        "single-v" => check_single_v(&r.sys_delta, cert()?, &r.grid)?,
        "pair-vb" => {
            let spec = r
                .stab
                .as_ref()
                .ok_or_else(|| anyhow!("pair-vb needs spec.x0, unsafe_set, attractor"))?;
            check_pair_vb(&r.sys_delta, cert()?, spec, &r.grid)?
        }
        "invariance" => {
            let k = sc.invariance_set(&r)?;
            check_forward_invariance(&r.sys_delta, &k, r.n_init, &r.sim, seed)
        }
        _ => unreachable!(),
    })
}

pub fn cmd_check(sc: &Scenario, mode: &str, out: &Path) -> Result<Outcome> {
    let report = run_check(sc, mode)?;
    write_json(out, "report.json", &report.to_json())?;
    Ok(Outcome {
        code: verdict_code(report.verdict),
        summary: format!(
            "check {mode}: {} condition={} margin={:.6e}",
            report.verdict, report.condition, report.margin
        ),
    })
}

pub fn cmd_falsify(sc: &Scenario, condition: &str, out: &Path) -> Result<Outcome> {
    let seed = seed_for(sc, "falsify")?;
    let r = sc.resolve()?;
    let cert = r.cert.as_ref().ok_or_else(|| anyhow!("falsify needs certificates"))?;
    let region = sc.falsify_region(&r)?;
    let res = falsify(&r.sys_delta, cert, condition, &region, r.budget, seed)?;
    let point = |p: &Option<(Vector, f64)>| {
        p.as_ref()
            .map(|(x, m)| json!({ "x": x.iter().copied().collect::<Vec<f64>>(), "margin": m }))
    };
    write_json(
        out,
        "falsify.json",
        &json!({
            "condition": condition,
            "verdict": res.verdict,
            "counterexample": point(&res.counterexample),
            "best": point(&res.best),
            "evaluations": res.evaluations,
            "seed": seed,
        }),
    )?;
    let code = if res.counterexample.is_some() { EXIT_FAIL } else { EXIT_PASS };
    let summary = match &res.counterexample {
        Some((x, m)) => format!(
            "falsify {condition}: counterexample margin={m:.6e} at {:?}",
            x.as_slice()
        ),
        None => format!(
            "falsify {condition}: none found in {} evaluations ({})",
            res.evaluations, res.verdict
        ),
    };
    Ok(Outcome { code, summary })
}

fn series_csv(arc: &HybridArc, header: &str, row: impl Fn(&Vector) -> Vec<f64>) -> String {
    let mut s = format!("j,t,total_time,{header}\n");
    for p in arc.samples() {
        let _ = write!(s, "{},{:.17e},{:.17e}", p.j, p.t, p.total_time());
        for v in row(p.x) {
            let _ = write!(s, ",{v:.17e}");
        }
        s.push('\n');
    }
    s
}

fn combined(parts: &[Verdict]) -> Verdict {
    if parts.contains(&Verdict::Fail) {
        Verdict::Fail
    } else if parts.contains(&Verdict::Inconclusive) {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    }
}

pub fn cmd_example(name: &str, overrides: &[String], out: &Path) -> Result<Outcome> {
    let sc = Scenario::example(name, overrides)?;
    match name {
        "bouncing-ball" => example_ball(&sc, out),
        "moore-greitzer" => example_mg(&sc, out),
        _ => unreachable!("validated by Scenario::example"),
    }
}

fn example_ball(sc: &Scenario, out: &Path) -> Result<Outcome> {
    let p: BouncingBallParams =
        scenario::merge_params(&BouncingBallParams::default(), &sc.system.params)?;
    let seed = sc.seed.unwrap_or(0);
    let r = sc.resolve()?;
    let rep = solve(&r.sys_delta, &r.x0, &r.sim)?;
    let cert = r.cert.as_ref().expect("example certificates");
    let (v, b) = (cert.v.clone(), cert.b.clone().expect("example barrier"));
    let ras = check_ras(&r.sys_delta, r.ras.as_ref().expect("example spec"), 1, r.n_dist, &r.sim, seed);
    let pair = check_pair_vb(&r.sys_delta, cert, r.stab.as_ref().expect("example spec"), &r.grid)?;
    let verdict = combined(&[ras.verdict, pair.verdict]);

    write_atomic(out, "arc.csv", &rep.arc.to_csv())?;
    write_json(out, "arc.json", &rep.arc.to_json())?;
    write_atomic(
        out,
        "barrier_series.csv",
        &series_csv(&rep.arc, "V,B,energy", |x| vec![v.eval(x), b.eval(x), p.energy(x)]),
    )?;
    write_json(
        out,
        "report.json",
        &json!({
            "example": "bouncing-ball",
            "verdict": verdict,
            "params": p,
            "simulation": rep.summary_json(),
            "ras": ras.to_json(),
            "pair_vb": pair.to_json(),
        }),
    )?;
    Ok(Outcome {
        code: verdict_code(verdict),
        summary: format!(
            "example bouncing-ball: {verdict} (ras {}, pair-vb {}) jumps={} settle_time={}",
            ras.verdict,
            pair.verdict,
            rep.jump_count,
            ras.stats.settle_time.map_or("none".into(), |t| format!("{t:.4}"))
        ),
    })
}

fn example_mg(sc: &Scenario, out: &Path) -> Result<Outcome> {
    let p: MooreGreitzerParams =
        scenario::merge_params(&MooreGreitzerParams::default(), &sc.system.params)?;
    let r = sc.resolve()?;
    let x0 = mg_equilibrium(p.gamma0, &p)?;
    let run = run_closed_loop(
        &p.plant()?,
        p.policy()?,
        &p.sample_hold(),
        &x0,
        &vector(&[0.0, p.gamma0]),
        &r.sim,
    )?;
    let arc = run.arc();
    let (v, b) = (p.lyapunov(), p.barrier());
    let u_set = p.unsafe_set();
    let zeta = vector(&p.zeta);
    let proj = |x: &Vector| x.rows(0, 2).into_owned();

    let mut worst_u = f64::NEG_INFINITY;
    let mut hit = None;
    for s in arc.samples() {
        let xs = proj(s.x);
        let m = if u_set.contains(&xs, 0.0) {
            u_set.depth(&xs).unwrap_or(0.0).max(1e-12)
        } else {
            -u_set.dist(&xs).unwrap_or(0.0)
        };
        if m > worst_u {
            worst_u = m;
            hit = Some(Witness::at(s.j, s.t, s.x));
        }
    }
    let fin = proj(arc.final_state());
    let reach = (&fin - &zeta).norm();
    let tol_reach = 0.01;
    let ib = p.input_box();
    let mut box_margin = f64::NEG_INFINITY;
    let mut rate_margin = f64::NEG_INFINITY;
    let mut g_prev = p.gamma0;
    for d in &run.decisions {
        let u = vector(&d.decision.u);
        box_margin = box_margin.max(-ib.depth(&u));
        rate_margin = rate_margin.max((d.decision.u[1] - g_prev).abs() - p.rate_limit * p.period);
        g_prev = d.decision.u[1];
    }
    let n_dec = run.decisions.len();
    let relaxed = run.decisions.iter().filter(|d| d.decision.level > 0).count();
    let conditions = vec![
        ConditionResult::from_margin("safety", worst_u, arc.sample_count(), hit, 0.0),
        ConditionResult::from_margin(
            "reach",
            reach - tol_reach,
            1,
            Some(Witness::point(arc.final_state())),
            0.0,
        )
        .with_value("final_distance", reach),
        ConditionResult::from_margin("input-box", box_margin, n_dec, None, 1e-12),
        ConditionResult::from_margin("rate-limit", rate_margin, n_dec, None, 1e-12),
    ];
    let mut report = CheckReport::from_conditions("closed-loop", conditions, vec![format!(
        "{relaxed} of {n_dec} decisions used a relaxation level"
    )]);
    report.stats.extra.insert("relaxed_decisions".into(), relaxed as f64);

    write_atomic(out, "arc.csv", &arc.to_csv())?;
    write_json(out, "arc.json", &arc.to_json())?;
    write_atomic(out, "decisions.csv", &run.decisions_csv())?;
    let mut controls = String::from("index,t,v,gamma,level\n");
    let mut margins = String::from("index,t,row_v,row_b,h,B\n");
    for d in &run.decisions {
        let x = vector(&d.x);
        let _ = writeln!(
            controls,
            "{},{:.17e},{:.17e},{:.17e},{}",
            d.index, d.t, d.decision.u[0], d.decision.u[1], d.decision.level
        );
        let _ = writeln!(
            margins,
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            d.index,
            d.t,
            d.decision.row_v,
            d.decision.row_b,
            p.h(&x),
            b.eval(&x)
        );
    }
    write_atomic(out, "controls.csv", &controls)?;
    write_atomic(out, "margins.csv", &margins)?;
    write_atomic(
        out,
        "barrier_series.csv",
        &series_csv(arc, "V,B,h", |z| {
            let x = proj(z);
            vec![v.eval(&x), b.eval(&x), p.h(&x)]
        }),
    )?;
    write_json(
        out,
        "report.json",
        &json!({
            "example": "moore-greitzer",
            "verdict": report.verdict,
            "params": p,
            "simulation": run.report.summary_json(),
            "closed_loop": report.to_json(),
        }),
    )?;
    Ok(Outcome {
        code: verdict_code(report.verdict),
        summary: format!(
            "example moore-greitzer: {} final |x-zeta|={reach:.4e} decisions={n_dec} relaxed={relaxed}",
            report.verdict
        ),
    })
}
