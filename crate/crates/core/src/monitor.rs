//! Sampled verdicts for forward invariance, reach-avoid-stay and stability
//! with safety, plus extraction of an inner estimate of the invariant core of
//! a target set.
//!
//! Every PASS here means "no counterexample among the sampled solutions".

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{inflate, AxisBox, SetRegion, Vector};
use crate::hybrid::{HybridArc, HybridSystem, Termination};
use crate::report::{CheckReport, ConditionResult, Counterexample, Verdict, Witness};
use crate::sim::{derive_seed, sample_region, solve, SimConfig, SolveReport};

#[derive(Clone, Debug)]
pub enum InitialSet {
    Points(Vec<Vector>),
    Region(SetRegion),
}

impl InitialSet {
    /// Explicit points as given, or `n` seeded samples of the region.
    pub fn points(&self, within: &AxisBox, n: usize, seed: u64) -> Vec<Vector> {
        match self {
            InitialSet::Points(p) => p.clone(),
            InitialSet::Region(r) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                sample_region(r, within, n, &mut rng)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct RASSpec {
    pub x0: InitialSet,
    pub unsafe_set: SetRegion,
    pub target: SetRegion,
    pub settle_deadline: f64,
}

#[derive(Clone, Debug)]
pub struct StabSafeSpec {
    pub x0: InitialSet,
    pub unsafe_set: SetRegion,
    pub attractor: SetRegion,
    pub eps_levels: Vec<f64>,
}

/// Runs `n_dist` disturbance realizations from every initial point.
fn run_all(
    sys: &HybridSystem,
    inits: &[Vector],
    n_dist: usize,
    cfg: &SimConfig,
    seed: u64,
) -> Vec<(usize, Result<SolveReport>)> {
    let n_dist = n_dist.max(1);
    let jobs: Vec<(usize, usize)> = (0..inits.len())
        .flat_map(|i| (0..n_dist).map(move |k| (i, k)))
        .collect();
    jobs.par_iter()
        .map(|&(i, k)| {
            let c = SimConfig {
                disturbance: cfg
                    .disturbance
                    .with_seed(derive_seed(seed, (i * n_dist + k) as u64)),
                ..cfg.clone()
            };
            (i, solve(sys, &inits[i], &c))
        })
        .collect()
}

/// Margin of "x ∉ U": positive depth inside U, minus the distance outside.
fn unsafe_margin(u: &SetRegion, x: &Vector, tol: f64) -> f64 {
    if u.contains(x, 0.0) {
        u.depth(x).unwrap_or(tol).max(tol)
    } else {
        -u.dist(x).unwrap_or(0.0)
    }
}

/// First sample of the arc inside U, with its margin.
fn first_unsafe(arc: &HybridArc, u: &SetRegion, tol: f64) -> (f64, Option<Witness>) {
    let mut worst = f64::NEG_INFINITY;
    for s in arc.samples() {
        let m = unsafe_margin(u, s.x, tol);
        if u.contains(s.x, 0.0) {
            return (m, Some(Witness::at(s.j, s.t, s.x)));
        }
        worst = worst.max(m);
    }
    (worst, None)
}

/// Least total time after which every sample lies in `target`, or None if the
/// final sample is outside. Also returns the last exit sample.
fn settle_time(arc: &HybridArc, target: &SetRegion) -> (Option<f64>, Option<Witness>) {
    let samples: Vec<_> = arc.samples().collect();
    let last_out = samples.iter().rposition(|s| !target.contains(s.x, 0.0));
    match last_out {
        None => (Some(samples[0].total_time()), None),
        Some(k) if k + 1 == samples.len() => {
            let s = samples[k];
            (None, Some(Witness::at(s.j, s.t, s.x)))
        }
        Some(k) => {
            let s = samples[k];
            (
                Some(samples[k + 1].total_time()),
                Some(Witness::at(s.j, s.t, s.x)),
            )
        }
    }
}

fn termination_notes(reports: &[(usize, Result<SolveReport>)], notes: &mut Vec<String>) {
    let mut counts = std::collections::BTreeMap::new();
    let mut errors = 0usize;
    for (_, r) in reports {
        match r {
            Ok(r) => *counts.entry(r.arc.termination.to_string()).or_insert(0usize) += 1,
            Err(_) => errors += 1,
        }
    }
    for (k, v) in counts {
        if k != Termination::HorizonReached.to_string() {
            notes.push(format!("{v} arcs terminated with {k}"));
        }
    }
    if errors > 0 {
        notes.push(format!("{errors} initial points had no solution"));
    }
}

pub fn check_forward_invariance(
    sys: &HybridSystem,
    k: &SetRegion,
    n_init: usize,
    cfg: &SimConfig,
    seed: u64,
) -> CheckReport {
    let inits = InitialSet::Region(k.clone()).points(&sys.bounds, n_init, seed);
    check_forward_invariance_from(sys, k, &inits, cfg, seed)
}

/// Forward invariance of K from explicit initial points.
pub fn check_forward_invariance_from(
    sys: &HybridSystem,
    k: &SetRegion,
    inits: &[Vector],
    cfg: &SimConfig,
    seed: u64,
) -> CheckReport {
    let keep = inflate(k, cfg.event_tol);
    let reports = run_all(sys, inits, 1, cfg, seed);
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    let mut counterexamples = Vec::new();
    let mut samples = 0usize;
    for (idx, (_, r)) in reports.iter().enumerate() {
        let Ok(r) = r else { continue };
        for s in r.arc.samples() {
            samples += 1;
            if !keep.contains(s.x, 0.0) {
                let m = k.dist(s.x).unwrap_or(2.0 * cfg.event_tol);
                let w = Witness::at(s.j, s.t, s.x);
                counterexamples.push(Counterexample {
                    condition: "invariance".into(),
                    margin: m,
                    witness: w.clone(),
                    arc: Some(idx),
                });
                if m > worst || witness.is_none() {
                    worst = m;
                    witness = Some(w);
                }
                break;
            }
        }
    }
    let verdict_margin = if counterexamples.is_empty() {
        -cfg.event_tol
    } else {
        worst.max(cfg.event_tol)
    };
    let mut cond = ConditionResult::from_margin("invariance", verdict_margin, samples, witness, 0.0);
    if !counterexamples.is_empty() {
        cond.verdict = Verdict::Fail;
    }
    let mut notes = vec![format!("{} initial points sampled from K", inits.len())];
    termination_notes(&reports, &mut notes);
    let mut report = CheckReport::from_conditions("invariance", vec![cond], notes);
    report.counterexamples = counterexamples;
    report
}

pub fn check_ras(
    sys: &HybridSystem,
    spec: &RASSpec,
    n_init: usize,
    n_dist: usize,
    cfg: &SimConfig,
    seed: u64,
) -> CheckReport {
    let tol = cfg.event_tol;
    let mut notes = Vec::new();
    if let Some(ib) = spec.target.sampling_box(&sys.bounds).filter(AxisBox::is_finite) {
        if let Ok(grid) = ib.grid(&vec![9; ib.dim()]) {
            if grid
                .iter()
                .any(|p| spec.target.contains(p, 0.0) && spec.unsafe_set.contains(p, 0.0))
            {
                notes.push("warning: target and unsafe sets intersect on sampled points".into());
            }
        }
    }
    let inits = spec.x0.points(&sys.bounds, n_init, seed);
    let reports = run_all(sys, &inits, n_dist, cfg, seed);
    let target = inflate(&spec.target, tol);

    let mut counterexamples = Vec::new();
    let mut safety_worst = (f64::NEG_INFINITY, None);
    let mut reach_worst = (f64::NEG_INFINITY, None);
    let mut settle_max: f64 = 0.0;
    let mut unsettled = false;
    let mut samples = 0usize;
    let mut arcs = 0usize;
    for (idx, (_, r)) in reports.iter().enumerate() {
        let Ok(r) = r else { continue };
        arcs += 1;
        samples += r.arc.sample_count();
        let (m, w) = first_unsafe(&r.arc, &spec.unsafe_set, tol);
        if let Some(w) = &w {
            counterexamples.push(Counterexample {
                condition: "safety".into(),
                margin: m,
                witness: w.clone(),
                arc: Some(idx),
            });
        }
        if m > safety_worst.0 {
            safety_worst = (m, w);
        }
        let (settle, exit) = settle_time(&r.arc, &target);
        let end = r.arc.end_time();
        let m = match settle {
            Some(t) => {
                settle_max = settle_max.max(t);
                t - spec.settle_deadline
            }
            None => {
                unsettled = true;
                (end.t + end.j as f64 - spec.settle_deadline).max(tol)
            }
        };
        if m > 0.0 {
            if let Some(w) = &exit {
                counterexamples.push(Counterexample {
                    condition: "reach-stay".into(),
                    margin: m,
                    witness: w.clone(),
                    arc: Some(idx),
                });
            }
        }
        if m > reach_worst.0 {
            reach_worst = (m, exit);
        }
    }
    let mut safety = ConditionResult::from_margin("safety", safety_worst.0, samples, safety_worst.1, 0.0);
    let mut reach = ConditionResult::from_margin("reach-stay", reach_worst.0, arcs, reach_worst.1, 0.0);
    if counterexamples.iter().any(|c| c.condition == "safety") {
        safety.verdict = Verdict::Fail;
    }
    if !unsettled {
        reach = reach.with_value("settle_time", settle_max);
    }
    notes.push(format!(
        "{arcs} arcs from {} initial points x {} disturbance draws",
        inits.len(),
        n_dist.max(1)
    ));
    termination_notes(&reports, &mut notes);
    let mut report = CheckReport::from_conditions("ras", vec![safety, reach], notes);
    report.counterexamples = counterexamples;
    report.stats.settle_time = (!unsettled).then_some(settle_max);
    report
}

pub fn check_stability_safety(
    sys: &HybridSystem,
    spec: &StabSafeSpec,
    n_init: usize,
    cfg: &SimConfig,
    seed: u64,
) -> CheckReport {
    let tol = cfg.event_tol;
    let mut notes = Vec::new();
    let mut conditions = Vec::new();
    let a = &spec.attractor;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchors = sample_region(a, &sys.bounds, n_init.max(1), &mut rng);
    let dirs: Vec<Vector> = (0..n_init.max(1))
        .map(|_| {
            let g = Vector::from_fn(sys.dim, |_, _| StandardNormal.sample(&mut rng));
            let n: f64 = g.norm();
            g / n.max(1e-300)
        })
        .collect();

    let stays_within = |delta: f64, eps: f64| -> (bool, Option<Witness>) {
        let inits: Vec<Vector> = anchors
            .iter()
            .cycle()
            .zip(dirs.iter())
            .map(|(p, d)| p + d * delta)
            .filter(|x| {
                sys.bounds.contains(x, tol) && (sys.in_flow_set(x, tol) || sys.in_jump_set(x, tol))
            })
            .collect();
        for (_, r) in run_all(sys, &inits, 1, cfg, seed) {
            let Ok(r) = r else { continue };
            for s in r.arc.samples() {
                if a.dist(s.x).unwrap_or(f64::INFINITY) > eps {
                    return (false, Some(Witness::at(s.j, s.t, s.x)));
                }
            }
        }
        (true, None)
    };

    let mut levels = spec.eps_levels.clone();
    levels.sort_by(f64::total_cmp);
    for &eps in &levels {
        let (ok_full, mut witness) = stays_within(eps, eps);
        let delta_eps = if ok_full {
            eps
        } else {
            let (mut lo, mut hi) = (0.0, eps);
            for _ in 0..20 {
                let mid = 0.5 * (lo + hi);
                let (ok, w) = stays_within(mid, eps);
                if ok {
                    lo = mid;
                } else {
                    hi = mid;
                    witness = w;
                }
            }
            lo
        };
        let id = format!("stability@eps={eps}");
        let mut c = ConditionResult::from_margin(
            id,
            -delta_eps,
            anchors.len(),
            if delta_eps > 0.0 { None } else { witness },
            0.0,
        )
        .with_value("delta_eps", delta_eps);
        if delta_eps <= 0.0 {
            c.verdict = Verdict::Fail;
            c.margin = eps;
        }
        conditions.push(c);
    }

    let inits = spec.x0.points(&sys.bounds, n_init, derive_seed(seed, 7));
    let reports = run_all(sys, &inits, 1, cfg, seed);
    let eps_min = levels.first().copied().unwrap_or(tol);
    let near = inflate(a, eps_min);
    let mut settle_max: f64 = 0.0;
    let mut unsettled = None;
    let mut safety_worst = (f64::NEG_INFINITY, None);
    let mut samples = 0usize;
    for (_, r) in &reports {
        let Ok(r) = r else { continue };
        samples += r.arc.sample_count();
        match settle_time(&r.arc, &near) {
            (Some(t), _) => settle_max = settle_max.max(t),
            (None, w) => unsettled = unsettled.or(w),
        }
        let (m, w) = first_unsafe(&r.arc, &spec.unsafe_set, tol);
        if m > safety_worst.0 {
            safety_worst = (m, w);
        }
    }
    let mut attract = ConditionResult::from_margin(
        "attractivity",
        if unsettled.is_some() { tol } else { -tol },
        inits.len(),
        unsettled.clone(),
        0.0,
    );
    if unsettled.is_none() {
        attract = attract.with_value("settle_time", settle_max);
    }
    if unsettled.is_some() {
        attract.verdict = Verdict::Inconclusive;
        notes.push(format!(
            "some arcs had not entered the {eps_min}-neighborhood of A by the horizon"
        ));
    }
    notes.push(format!(
        "settle time is the realized maximum over {} sampled arcs, not a uniform bound",
        inits.len()
    ));
    notes.push("rho of uniform attractivity is instantiated as the largest tested offset".into());
    conditions.push(attract);
    let mut safety =
        ConditionResult::from_margin("safety", safety_worst.0, samples, safety_worst.1.clone(), 0.0);
    if safety_worst.1.is_some() {
        safety.verdict = Verdict::Fail;
    }
    conditions.push(safety);
    termination_notes(&reports, &mut notes);
    let mut report = CheckReport::from_conditions("stability-safety", conditions, notes);
    report.stats.settle_time = unsettled.is_none().then_some(settle_max);
    for c in &report.conditions {
        if let Some(d) = c.values.get("delta_eps") {
            report.stats.extra.insert(c.id.clone(), *d);
        }
    }
    report
}

#[derive(Clone, Debug)]
pub struct CoreEstimate {
    pub points: Vec<Vector>,
    pub verdict: Verdict,
    pub candidates: usize,
    /// Survivors that lie outside C ∪ D and so have no solution at all.
    pub without_solution: usize,
    /// Candidates dropped because an arc left the simulation bounds.
    pub truncated: usize,
}

/// Grid points of I all of whose sampled solutions stay in I (within
/// event_tol) over the horizon.
pub fn estimate_invariant_core(
    sys: &HybridSystem,
    target: &SetRegion,
    grid_n: usize,
    n_dist: usize,
    cfg: &SimConfig,
    seed: u64,
) -> Result<CoreEstimate> {
    let tol = cfg.event_tol;
    let bbox = target
        .sampling_box(&sys.bounds)
        .filter(AxisBox::is_finite)
        .ok_or_else(|| Error::InvalidArgument("target set needs a bounding box".into()))?;
    let counts: Vec<usize> = (0..bbox.dim())
        .map(|i| if bbox.hi[i] > bbox.lo[i] { grid_n.max(1) } else { 1 })
        .collect();
    let candidates: Vec<Vector> = bbox
        .grid(&counts)?
        .into_iter()
        .filter(|x| target.contains(x, tol))
        .collect();
    let keep = inflate(target, tol);
    let (no_solution, with_solution): (Vec<Vector>, Vec<Vector>) = candidates
        .iter()
        .cloned()
        .partition(|x| !(sys.in_flow_set(x, tol) || sys.in_jump_set(x, tol)));
    let n_dist = n_dist.max(1);
    let reports = run_all(sys, &with_solution, n_dist, cfg, seed);
    let mut alive = vec![true; with_solution.len()];
    let mut truncated = vec![false; with_solution.len()];
    for (i, r) in &reports {
        let stays = match r {
            // An arc cut short by the simulation bounds says nothing about
            // the rest of its solution.
            Ok(r) if r.arc.termination == Termination::EscapedBounds => {
                truncated[*i] = true;
                false
            }
            Ok(r) => r.arc.samples().all(|s| keep.contains(s.x, 0.0)),
            Err(_) => false,
        };
        alive[*i] &= stays;
    }
    let truncated = truncated.iter().filter(|t| **t).count();
    let mut points: Vec<Vector> = with_solution
        .into_iter()
        .zip(alive)
        .filter_map(|(x, a)| a.then_some(x))
        .collect();
    let without_solution = no_solution.len();
    points.extend(no_solution);
    if points.is_empty() {
        return Err(Error::EmptyEstimate);
    }
    Ok(CoreEstimate {
        verdict: if without_solution > 0 {
            Verdict::Inconclusive
        } else {
            Verdict::Pass
        },
        candidates: candidates.len(),
        without_solution,
        truncated,
        points,
    })
}

/// Fraction of points whose re-simulated solutions stay in inflate(I, radius).
pub fn invariance_fraction(
    sys: &HybridSystem,
    target: &SetRegion,
    points: &[Vector],
    n_dist: usize,
    radius: f64,
    cfg: &SimConfig,
    seed: u64,
) -> f64 {
    if points.is_empty() {
        return 1.0;
    }
    let keep = inflate(target, radius);
    let n_dist = n_dist.max(1);
    let reports = run_all(sys, points, n_dist, cfg, seed);
    let mut alive = vec![true; points.len()];
    for (i, r) in &reports {
        alive[*i] &= match r {
            Ok(r) => r.arc.samples().all(|s| keep.contains(s.x, 0.0)),
            Err(_) => true,
        };
    }
    alive.iter().filter(|a| **a).count() as f64 / points.len() as f64
}
