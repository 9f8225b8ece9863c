use lbras_core::control::{rate_box, LEVEL_HOLD};
use lbras_core::{
    augment_sample_hold, make_system, mg_equilibrium, run_closed_loop, solve, vector,
    verify_solution, MooreGreitzerParams, SetRegion, SimConfig, Vector, Verdict,
};
use std::sync::Arc;

fn params() -> MooreGreitzerParams {
    MooreGreitzerParams::default()
}

#[test]
fn equilibrium_is_invariant_under_the_open_loop_flow() {
    let p = params();
    for gamma in [0.62, 0.64, 0.66] {
        let xe = mg_equilibrium(gamma, &p).unwrap();
        let pp = p.clone();
        let u = vector(&[0.0, gamma]);
        let sys = make_system(
            2,
            SetRegion::AxisBox(p.state_box()),
            Arc::new(move |x: &Vector| pp.try_vector_field(x, &u).unwrap()),
            SetRegion::empty(),
            Arc::new(|x: &Vector| vec![x.clone()]),
            p.state_box(),
        )
        .unwrap();
        let arc = solve(&sys, &xe, &SimConfig::default().with_horizon(10.0)).unwrap().arc;
        let drift = arc.samples().map(|s| (s.x - &xe).norm()).fold(0.0, f64::max);
        assert!(drift <= 1e-6, "gamma={gamma}: drift {drift:e}");
    }
}

#[test]
fn equilibrium_branch_is_continuous() {
    let p = params();
    let mut prev = mg_equilibrium(0.62, &p).unwrap();
    for k in 1..=40 {
        let x = mg_equilibrium(0.62 + 0.001 * k as f64, &p).unwrap();
        assert!((x[0] - prev[0]).abs() < 0.05);
        prev = x;
    }
}

fn closed_loop(horizon: f64) -> lbras_core::control::ClosedLoopRun {
    let p = params();
    let x0 = mg_equilibrium(p.gamma0, &p).unwrap();
    run_closed_loop(
        &p.plant().unwrap(),
        p.policy().unwrap(),
        &p.sample_hold(),
        &x0,
        &vector(&[0.0, p.gamma0]),
        &SimConfig::default().with_horizon(horizon).with_step(1e-2),
    )
    .unwrap()
}

#[test]
fn one_decision_per_period() {
    let p = params();
    let run = closed_loop(10.0);
    assert_eq!(run.decisions.len(), 21);
    for (k, d) in run.decisions.iter().enumerate() {
        assert!((d.t - k as f64 * p.period).abs() < 1e-6, "decision {k} at {}", d.t);
    }
}

#[test]
fn decisions_respect_box_rate_and_nominal_rows() {
    let p = params();
    let run = closed_loop(30.0);
    let ib = p.input_box();
    let mut u_prev = vector(&[0.0, p.gamma0]);
    for d in &run.decisions {
        let u = vector(&d.decision.u);
        let step_box = rate_box(&ib, &p.sample_hold().rate_limits, &u_prev, p.period);
        assert!(step_box.contains(&u, 1e-12), "decision {} leaves the step box", d.index);
        assert!(d.decision.level <= LEVEL_HOLD);
        if d.decision.level == 0 {
            assert!(d.decision.row_v <= 1e-9 && d.decision.row_b <= 1e-9);
        }
        u_prev = u;
    }
}

#[test]
fn held_input_matches_decisions() {
    let run = closed_loop(10.0);
    let arc = run.arc();
    for d in &run.decisions[..run.decisions.len() - 1] {
        let z = arc.phases[d.index + 1].first();
        assert_eq!(z[2], d.decision.u[0]);
        assert_eq!(z[3], d.decision.u[1]);
        assert_eq!(z[4], 0.0);
    }
}

#[test]
fn lifted_arc_is_a_solution() {
    let p = params();
    let run = closed_loop(10.0);
    let sys = augment_sample_hold(&p.plant().unwrap(), p.policy().unwrap(), &p.sample_hold()).unwrap();
    let rep = verify_solution(&sys, run.arc(), 1e-6).unwrap();
    assert_eq!(rep.verdict, Verdict::Pass, "{:#?}", rep.conditions);
}

#[test]
fn closed_loop_stays_out_of_protected_box() {
    let p = params();
    let run = closed_loop(100.0);
    let u = p.unsafe_set();
    for s in run.arc().samples() {
        let x = s.x.rows(0, 2).into_owned();
        assert!(!u.contains(&x, 0.0), "entered U at t={}", s.t);
        assert!(p.h(&x) > 0.0);
    }
}

#[test]
fn decisions_csv_has_one_row_per_decision() {
    let run = closed_loop(5.0);
    let csv = run.decisions_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("index,t,x1,x2,u1,u2,row_v,row_b,cost,level"));
    assert_eq!(lines.count(), run.decisions.len());
}
