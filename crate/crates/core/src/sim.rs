//! Solutions of H_δ by fixed-step RK4 with bisection event location, arc
//! comparison by (τ,ε)-closeness, perturbed-companion construction, and
//! sample-level verification of the solution conditions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{SetRegion, Vector, DEFAULT_TOL};
use crate::hybrid::{Disturbance, HybridArc, HybridSystem, HybridTime, Phase, Termination};
use crate::report::{CheckReport, ConditionResult, Witness};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Priority {
    JumpFirst,
    FlowFirst,
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub step: f64,
    /// Bound on flow time t.
    pub horizon: f64,
    pub max_jumps: usize,
    pub event_tol: f64,
    pub priority: Priority,
    pub disturbance: Disturbance,
    pub zeno_gap: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            horizon: 10.0,
            max_jumps: 10_000,
            event_tol: DEFAULT_TOL,
            priority: Priority::JumpFirst,
            disturbance: Disturbance::None,
            zeno_gap: 1e-6,
        }
    }
}

impl SimConfig {
    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    pub fn with_disturbance(mut self, d: Disturbance) -> Self {
        self.disturbance = d;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(self.event_tol > 0.0) || !(self.zeno_gap > 0.0) {
            return Err(Error::InvalidArgument(
                "step, event_tol and zeno_gap must be positive".into(),
            ));
        }
        if !(self.horizon >= 0.0) {
            return Err(Error::InvalidArgument("horizon must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub arc: HybridArc,
    pub flow_time: f64,
    pub jump_count: usize,
    pub zeno_snapped: bool,
}

impl SolveReport {
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "flow_time": self.flow_time,
            "jump_count": self.jump_count,
            "zeno_snapped": self.zeno_snapped,
            "termination": self.arc.termination.to_string(),
            "samples": self.arc.sample_count(),
            "final_state": self.arc.final_state().iter().copied().collect::<Vec<f64>>(),
        })
    }
}

/// Mixes a base seed with a sample index (splitmix64 finalizer).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct DisturbanceSource<'a> {
    mode: &'a Disturbance,
    rng: Option<ChaCha8Rng>,
    delta: f64,
    dim: usize,
}

impl<'a> DisturbanceSource<'a> {
    fn new(mode: &'a Disturbance, delta: f64, dim: usize) -> Self {
        let rng = mode.seed().map(ChaCha8Rng::seed_from_u64);
        Self {
            mode,
            rng,
            delta,
            dim,
        }
    }

    fn sample(&mut self, ht: HybridTime) -> Vector {
        if self.delta == 0.0 {
            return Vector::zeros(self.dim);
        }
        match self.mode {
            Disturbance::None => Vector::zeros(self.dim),
            Disturbance::RandomUniformBall { .. } => {
                let rng = self.rng.as_mut().expect("seeded source");
                uniform_in_ball(rng, self.dim, self.delta)
            }
            Disturbance::Fixed(signal) => {
                let d = signal(ht);
                let n = d.norm();
                if n > self.delta {
                    d * (self.delta / n)
                } else {
                    d
                }
            }
        }
    }
}

pub fn uniform_in_ball<R: Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64) -> Vector {
    let dir = loop {
        let g = Vector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = g.norm();
        if n > 1e-12 {
            break g / n;
        }
    };
    let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
    dir * r
}

fn rk4(sys: &HybridSystem, x: &Vector, h: f64, d: &Vector) -> Vector {
    let f = |y: &Vector| sys.flow(y) + d;
    let k1 = f(x);
    let k2 = f(&(x + &k1 * (h / 2.0)));
    let k3 = f(&(x + &k2 * (h / 2.0)));
    let k4 = f(&(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

fn is_finite(x: &Vector) -> bool {
    x.iter().all(|v| v.is_finite())
}

pub fn solve(sys: &HybridSystem, x0: &Vector, cfg: &SimConfig) -> Result<SolveReport> {
    cfg.validate()?;
    if x0.len() != sys.dim {
        return Err(Error::DimensionMismatch {
            what: "initial condition".into(),
            expected: sys.dim,
            found: x0.len(),
        });
    }
    let tol = cfg.event_tol;
    if !is_finite(x0)
        || !sys.bounds.contains(x0, tol)
        || !(sys.in_flow_set(x0, tol) || sys.in_jump_set(x0, tol))
    {
        return Err(Error::BadInitialCondition);
    }
    let jump_first = cfg.priority == Priority::JumpFirst;
    let event = |y: &Vector| {
        !is_finite(y)
            || !sys.bounds.contains(y, tol)
            || !sys.in_flow_set(y, tol)
            || (jump_first && sys.in_jump_set(y, tol))
    };
    let horizon_eps = 1e-12 * cfg.horizon.max(1.0);

    let mut src = DisturbanceSource::new(&cfg.disturbance, sys.delta, sys.dim);
    let mut phases = vec![Phase::start(0.0, x0.clone())];
    let mut snapped: Vec<usize> = Vec::new();
    let mut snap_phase: Option<usize> = None;
    let mut prev_gap_small = false;
    let mut t = 0.0;
    let mut x = x0.clone();

    let termination = loop {
        if t >= cfg.horizon - horizon_eps {
            break Termination::HorizonReached;
        }
        let j = phases.len() - 1;
        let in_c = sys.in_flow_set(&x, tol);
        let in_d = sys.in_jump_set(&x, tol);

        if in_d && (jump_first || !in_c) {
            if j >= cfg.max_jumps {
                break Termination::HorizonReached;
            }
            let gap = if j >= 1 {
                t - phases[j].t_start()
            } else {
                f64::INFINITY
            };
            let small = gap < cfg.zeno_gap;
            let next = match (&sys.zeno_reset, small) {
                (Some(reset), true) => {
                    if snap_phase == Some(j) {
                        break Termination::ZenoAccumulation;
                    }
                    snapped.push(j);
                    snap_phase = Some(j + 1);
                    reset(&x)
                }
                (None, true) if prev_gap_small => break Termination::ZenoAccumulation,
                _ => {
                    let cands = sys.jump(&x);
                    let g = cands.into_iter().next().ok_or(Error::EmptyJumpMap)?;
                    g + src.sample(HybridTime::new(t, j))
                }
            };
            prev_gap_small = small;
            phases.push(Phase::start(t, next.clone()));
            x = next;
            continue;
        }
        if !in_c {
            break Termination::LeftFlowAndJumpSets;
        }

        let hs = cfg.step.min(cfg.horizon - t);
        let d = src.sample(HybridTime::new(t, j));
        let x_new = rk4(sys, &x, hs, &d);
        if !event(&x_new) {
            t += hs;
            phases[j].push(t, x_new.clone());
            x = x_new;
            continue;
        }

        let (mut lo, mut hi) = (0.0, hs);
        let (mut x_lo, mut x_hi) = (x.clone(), x_new);
        for _ in 0..200 {
            if hi - lo <= tol && (&x_hi - &x_lo).norm() <= tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let xm = rk4(sys, &x, mid, &d);
            if event(&xm) {
                hi = mid;
                x_hi = xm;
            } else {
                lo = mid;
                x_lo = xm;
            }
        }
        let escaped = !is_finite(&x_hi) || !sys.bounds.contains(&x_hi, tol);
        let lands_in_d = !escaped && sys.in_jump_set(&x_hi, tol);
        if lands_in_d {
            t += hi;
            phases[j].push(t, x_hi.clone());
            x = x_hi;
            continue;
        }
        if lo > 0.0 {
            phases[j].push(t + lo, x_lo);
        }
        break if escaped {
            Termination::EscapedBounds
        } else {
            Termination::LeftFlowAndJumpSets
        };
    };

    let arc = HybridArc {
        phases,
        termination,
        snapped_jumps: snapped,
    };
    debug_assert!(arc.validate().is_ok());
    let zeno_snapped = !arc.snapped_jumps.is_empty();
    Ok(SolveReport {
        flow_time: arc.flow_time(),
        jump_count: arc.jump_count(),
        zeno_snapped,
        arc,
    })
}

/// Solves from each initial point in parallel. Random disturbances use a seed
/// derived from the configured seed and the sample index.
pub fn solve_batch(
    sys: &HybridSystem,
    x0s: &[Vector],
    cfg: &SimConfig,
) -> Vec<Result<SolveReport>> {
    x0s.par_iter()
        .enumerate()
        .map(|(i, x0)| {
            let cfg_i = match cfg.disturbance.seed() {
                Some(s) => SimConfig {
                    disturbance: cfg.disturbance.with_seed(derive_seed(s, i as u64)),
                    ..cfg.clone()
                },
                None => cfg.clone(),
            };
            solve(sys, x0, &cfg_i)
        })
        .collect()
}

/// Draws `n` points of `region` by rejection from its bounding box clipped to
/// `within`. Singleton balls return their center.
pub fn sample_region<R: Rng + ?Sized>(
    region: &SetRegion,
    within: &crate::geometry::AxisBox,
    n: usize,
    rng: &mut R,
) -> Vec<Vector> {
    if let SetRegion::Ball { center, radius } = region {
        if *radius == 0.0 {
            return vec![center.clone(); n.min(1)];
        }
    }
    let Some(bbox) = region.sampling_box(within).filter(|b| b.is_finite()) else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(n);
    for _ in 0..200 {
        if out.len() >= n {
            break;
        }
        let want = n - out.len();
        for p in bbox.latin_hypercube(rng, want.max(8)).unwrap_or_default() {
            if out.len() < n && region.contains(&p, DEFAULT_TOL) {
                out.push(p);
            }
        }
    }
    out
}

/// Under-approximating point cloud of the reachable set up to total time T.
pub fn reachable_sample(
    sys: &HybridSystem,
    x0_set: &SetRegion,
    t_total: f64,
    n_init: usize,
    n_dist: usize,
    cfg: &SimConfig,
    seed: u64,
) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inits = sample_region(x0_set, &sys.bounds, n_init.max(1), &mut rng);
    let cfg_t = SimConfig {
        horizon: cfg.horizon.min(t_total),
        max_jumps: cfg.max_jumps.min(t_total.floor().max(0.0) as usize),
        ..cfg.clone()
    };
    let jobs: Vec<(usize, usize)> = (0..inits.len())
        .flat_map(|i| (0..n_dist.max(1)).map(move |k| (i, k)))
        .collect();
    let clouds: Vec<Vec<Vector>> = jobs
        .par_iter()
        .map(|&(i, k)| {
            let c = SimConfig {
                disturbance: cfg
                    .disturbance
                    .with_seed(derive_seed(seed, (i * n_dist.max(1) + k) as u64)),
                ..cfg_t.clone()
            };
            match solve(sys, &inits[i], &c) {
                Ok(rep) => rep
                    .arc
                    .samples()
                    .filter(|s| s.total_time() <= t_total)
                    .map(|s| s.x.clone())
                    .collect(),
                Err(_) => Vec::new(),
            }
        })
        .collect();
    clouds.into_iter().flatten().collect()
}

/// Minimum distance from `x` to the polyline of phase j restricted to times in
/// the open window (lo, hi).
fn window_distance(arc: &HybridArc, j: usize, x: &Vector, lo: f64, hi: f64) -> f64 {
    let Some(p) = arc.phases.get(j) else {
        return f64::INFINITY;
    };
    let a = lo.max(p.t_start());
    let b = hi.min(p.t_end());
    if a > b {
        return f64::INFINITY;
    }
    let (Ok(xa), Ok(xb)) = (arc.eval(a, j), arc.eval(b, j)) else {
        return f64::INFINITY;
    };
    let mut knots: Vec<Vector> = vec![xa];
    for (&t, s) in p.times.iter().zip(p.states.iter()) {
        if t > a && t < b {
            knots.push(s.clone());
        }
    }
    knots.push(xb);
    let mut best = f64::INFINITY;
    for w in knots.windows(2) {
        let seg = &w[1] - &w[0];
        let len2 = seg.norm_squared();
        let s = if len2 > 0.0 {
            ((x - &w[0]).dot(&seg) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        best = best.min((x - (&w[0] + seg * s)).norm());
    }
    best
}

fn one_sided_close(a: &HybridArc, b: &HybridArc, tau: f64, eps: f64) -> bool {
    let shrink = eps * (1.0 - 1e-12);
    a.samples()
        .filter(|s| s.total_time() <= tau)
        .all(|s| window_distance(b, s.j, s.x, s.t - shrink, s.t + shrink) < eps)
}

/// (τ,ε)-closeness over stored samples with total time at most τ.
pub fn closeness(arc1: &HybridArc, arc2: &HybridArc, tau: f64, eps: f64) -> bool {
    eps > 0.0 && one_sided_close(arc1, arc2, tau, eps) && one_sided_close(arc2, arc1, tau, eps)
}

/// ψ(t,j) = φ(t,j) + (1 − (t+j)/T)(x_new − φ(0,0)) on the part of dom φ with
/// t+j ≤ T. A flow interval crossing T gets an interpolated sample at T. When
/// T falls between the two sides of a jump, the post-jump sample is kept with
/// zero offset and the arc stops there.
pub fn construct_perturbed(phi: &HybridArc, x_new: &Vector, t_total: f64) -> Result<HybridArc> {
    if !(t_total > 0.0) {
        return Err(Error::InvalidArgument("T must be positive".into()));
    }
    let end = phi.end_time();
    let available = end.t + end.j as f64;
    if available < t_total {
        return Err(Error::HorizonTooShort {
            available,
            requested: t_total,
        });
    }
    let offset = x_new - phi.initial();
    let factor = |t: f64, j: usize| (1.0 - (t + j as f64) / t_total).max(0.0);
    let mut phases: Vec<Phase> = Vec::new();
    'outer: for (j, p) in phi.phases.iter().enumerate() {
        let mut out: Option<Phase> = None;
        for k in 0..p.len() {
            let t = p.times[k];
            let tt = t + j as f64;
            if tt > t_total {
                if k > 0 {
                    let tc = t_total - j as f64;
                    let xc = phi.eval(tc, j)?;
                    if let Some(o) = out.as_mut() {
                        if tc > o.t_end() {
                            o.push(tc, xc);
                        }
                    }
                } else {
                    out = Some(Phase::start(t, p.states[k].clone()));
                }
                phases.extend(out);
                break 'outer;
            }
            let y = &p.states[k] + &offset * factor(t, j);
            match out.as_mut() {
                None => out = Some(Phase::start(t, y)),
                Some(o) => o.push(t, y),
            }
            if tt == t_total {
                if let Some(o) = out.as_mut() {
                    let last = o.states.len() - 1;
                    o.states[last] = p.states[k].clone();
                }
                phases.extend(out);
                break 'outer;
            }
        }
        phases.extend(out);
    }
    let jumps = phases.len().saturating_sub(1);
    let arc = HybridArc {
        phases,
        termination: Termination::HorizonReached,
        snapped_jumps: phi
            .snapped_jumps
            .iter()
            .copied()
            .filter(|&j| j < jumps)
            .collect(),
    };
    arc.validate()?;
    Ok(arc)
}

/// Checks a candidate arc against the solution conditions of `sys`
/// (flow-set membership of interior samples, finite-difference slopes against
/// f at segment midpoints, jump departure from D and landing near G).
pub fn verify_solution(sys: &HybridSystem, arc: &HybridArc, slope_tol: f64) -> Result<CheckReport> {
    arc.validate()?;
    let tol = DEFAULT_TOL;
    let delta = sys.delta;
    let mut flow_slot = Slot::default();
    let mut slope_slot = Slot::default();
    let mut from_slot = Slot::default();
    let mut to_slot = Slot::default();
    let mut notes = Vec::new();

    for (j, p) in arc.phases.iter().enumerate() {
        for k in 1..p.len().saturating_sub(1) {
            let x = &p.states[k];
            let margin = if sys.in_flow_set(x, tol) {
                -sys.flow_set.depth(x).unwrap_or(0.0)
            } else {
                sys.flow_set.dist(x).unwrap_or(1.0).max(tol)
            };
            flow_slot.record(margin, Witness::at(j, p.times[k], x));
        }
        for k in 0..p.len().saturating_sub(1) {
            let dt = p.times[k + 1] - p.times[k];
            let (xa, xb) = (&p.states[k], &p.states[k + 1]);
            let slope = (xb - xa) / dt;
            let mid = (xa + xb) * 0.5;
            let scale = xa.amax().max(xb.amax()).max(1.0);
            let roundoff = 8.0 * f64::EPSILON * scale / dt;
            let defect = (slope - sys.flow(&mid)).norm();
            let margin = defect - (delta + slope_tol + roundoff);
            slope_slot.record(margin, Witness::at(j, p.times[k], xa));
        }
        if j + 1 < arc.phases.len() {
            let pre = p.last();
            let post = arc.phases[j + 1].first();
            let t = p.t_end();
            if arc.snapped_jumps.contains(&j) {
                notes.push(format!("transition {j} at t={t} is a Zeno reset; not checked against G"));
                continue;
            }
            let m_from = if sys.in_jump_set(pre, tol) {
                -tol
            } else {
                sys.jump_set.dist(pre).unwrap_or(1.0).max(tol)
            };
            from_slot.record(m_from, Witness::at(j, t, pre));
            let landing = sys
                .jump(pre)
                .iter()
                .map(|g| (post - g).norm())
                .fold(f64::INFINITY, f64::min);
            to_slot.record(landing - (delta + slope_tol), Witness::at(j + 1, t, post));
        }
    }
    Ok(CheckReport::from_conditions(
        "verify_solution",
        vec![
            flow_slot.finish("flow-set"),
            slope_slot.finish("flow-slope"),
            from_slot.finish("jump-from-D"),
            to_slot.finish("jump-to-G"),
        ],
        notes,
    ))
}

/// Worst margin of one condition plus its first violating sample.
#[derive(Default)]
struct Slot {
    worst: Option<(f64, Witness)>,
    first_violation: Option<(f64, Witness)>,
    n: usize,
}

impl Slot {
    fn record(&mut self, margin: f64, w: Witness) {
        self.n += 1;
        if margin > 0.0 && self.first_violation.is_none() {
            self.first_violation = Some((margin, w.clone()));
        }
        if self.worst.as_ref().is_none_or(|(m, _)| margin > *m) {
            self.worst = Some((margin, w));
        }
    }

    fn finish(self, id: &str) -> ConditionResult {
        let margin = self.worst.as_ref().map_or(0.0, |(m, _)| *m);
        let witness = self.first_violation.or(self.worst).map(|(_, w)| w);
        let mut c = ConditionResult::from_margin(id, margin, self.n, witness, 0.0);
        if self.n == 0 {
            c.verdict = crate::report::Verdict::Pass;
        }
        c
    }
}

/// Largest sampled ratio |m(x+p) − m(x)| / |p| over perturbations of norm
/// `radius` around the given points.
pub fn estimate_lipschitz(
    map: &dyn Fn(&Vector) -> Vector,
    points: &[Vector],
    radius: f64,
    dirs_per_point: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for x in points {
        let fx = map(x);
        for _ in 0..dirs_per_point {
            let p = uniform_in_ball(&mut rng, x.len(), radius);
            let n = p.norm();
            if n < 1e-3 * radius {
                continue;
            }
            let ratio = (map(&(x + &p)) - &fx).norm() / n;
            if ratio.is_finite() {
                best = best.max(ratio);
            }
        }
    }
    best
}

/// Empirical Lipschitz constants of f over the flow samples and of the first
/// G-candidate over the pre-jump samples of `arc`, probed at radius `radius`.
pub fn arc_lipschitz(sys: &HybridSystem, arc: &HybridArc, radius: f64, seed: u64) -> (f64, f64) {
    let flow_pts: Vec<Vector> = arc.samples().map(|s| s.x.clone()).collect();
    let stride = (flow_pts.len() / 2000).max(1);
    let flow_pts: Vec<Vector> = flow_pts.into_iter().step_by(stride).collect();
    let jump_pts: Vec<Vector> = arc
        .phases
        .iter()
        .take(arc.phases.len().saturating_sub(1))
        .map(|p| p.last().clone())
        .collect();
    let f = |x: &Vector| sys.flow(x);
    let g = |x: &Vector| sys.jump(x).into_iter().next().unwrap_or_else(|| x.clone());
    (
        estimate_lipschitz(&f, &flow_pts, radius, 8, seed),
        estimate_lipschitz(&g, &jump_pts, radius, 32, derive_seed(seed, 1)),
    )
}

/// δ = δ' + r·max(1, 1/τ + L_C, 1 + L_D), the smallest perturbation level for
/// which the companion arc with initial offset r is admissible.
pub fn companion_delta(r: f64, delta_prime: f64, tau: f64, l_c: f64, l_d: f64) -> f64 {
    delta_prime + r * 1f64.max(1.0 / tau + l_c).max(1.0 + l_d)
}

/// Largest offset r admissible for the pair (δ', δ).
pub fn companion_radius(delta: f64, delta_prime: f64, tau: f64, l_c: f64, l_d: f64) -> f64 {
    (delta - delta_prime) / 1f64.max(1.0 / tau + l_c).max(1.0 + l_d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{vector, AxisBox};
    use crate::hybrid::{make_system, perturb};
    use std::sync::Arc;

    fn linear(rate: f64) -> HybridSystem {
        make_system(
            1,
            SetRegion::whole(1),
            Arc::new(move |x: &Vector| x * rate),
            SetRegion::empty(),
            Arc::new(|x: &Vector| vec![x.clone()]),
            AxisBox::from_slices(&[-100.0], &[100.0]).unwrap(),
        )
        .unwrap()
    }

    fn sup_error(h: f64) -> f64 {
        let cfg = SimConfig::default().with_step(h).with_horizon(2.0);
        let rep = solve(&linear(-1.0), &vector(&[1.0]), &cfg).unwrap();
        rep.arc
            .samples()
            .map(|s| (s.x[0] - (-s.t).exp()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn scalar_exponential() {
        let cfg = SimConfig::default().with_horizon(1.0);
        let rep = solve(&linear(-1.0), &vector(&[1.0]), &cfg).unwrap();
        let x1 = rep.arc.eval(1.0, 0).unwrap()[0];
        assert!((x1 - (-1f64).exp()).abs() < 1e-8);
        assert_eq!(rep.arc.termination, Termination::HorizonReached);
    }

    #[test]
    fn rk4_fourth_order() {
        let e1 = sup_error(0.1);
        let e2 = sup_error(0.05);
        let e3 = sup_error(0.025);
        let r1 = (e1 / e2).log2();
        let r2 = (e2 / e3).log2();
        assert!(r1 > 3.7 && r2 > 3.7, "orders {r1} {r2}");
    }

    fn toggle() -> HybridSystem {
        make_system(
            1,
            SetRegion::whole(1),
            Arc::new(|_: &Vector| vector(&[1.0])),
            SetRegion::boxed(&[0.0], &[0.0]).unwrap(),
            Arc::new(|_: &Vector| vec![vector(&[-1.0])]),
            AxisBox::from_slices(&[-10.0], &[10.0]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn jump_first_at_time_zero() {
        let cfg = SimConfig::default().with_horizon(0.5);
        let rep = solve(&toggle(), &vector(&[0.0]), &cfg).unwrap();
        assert_eq!(rep.arc.phases[0].len(), 1);
        assert_eq!(rep.arc.phases[1].t_start(), 0.0);
        assert_eq!(rep.arc.phases[1].first()[0], -1.0);
    }

    #[test]
    fn flow_first_defers_jump() {
        let cfg = SimConfig {
            priority: Priority::FlowFirst,
            ..SimConfig::default().with_horizon(0.5)
        };
        let rep = solve(&toggle(), &vector(&[0.0]), &cfg).unwrap();
        assert_eq!(rep.jump_count, 0);
    }

    #[test]
    fn bad_initial_condition() {
        let sys = make_system(
            1,
            SetRegion::boxed(&[0.0], &[1.0]).unwrap(),
            Arc::new(|x: &Vector| -x),
            SetRegion::empty(),
            Arc::new(|x: &Vector| vec![x.clone()]),
            AxisBox::from_slices(&[-10.0], &[10.0]).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            solve(&sys, &vector(&[5.0]), &SimConfig::default()),
            Err(Error::BadInitialCondition)
        ));
    }

    #[test]
    fn leaving_flow_set_terminates() {
        let sys = make_system(
            1,
            SetRegion::boxed(&[-1.0], &[1.0]).unwrap(),
            Arc::new(|_: &Vector| vector(&[1.0])),
            SetRegion::empty(),
            Arc::new(|x: &Vector| vec![x.clone()]),
            AxisBox::from_slices(&[-10.0], &[10.0]).unwrap(),
        )
        .unwrap();
        let rep = solve(&sys, &vector(&[0.0]), &SimConfig::default()).unwrap();
        assert_eq!(rep.arc.termination, Termination::LeftFlowAndJumpSets);
        assert!((rep.arc.final_state()[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn escaping_bounds_terminates() {
        let rep = solve(&linear(1.0), &vector(&[1.0]), &SimConfig::default()).unwrap();
        assert_eq!(rep.arc.termination, Termination::EscapedBounds);
        assert!(rep.arc.final_state()[0] <= 100.0 + 1e-9);
    }

    #[test]
    fn batch_matches_solve_and_is_reproducible() {
        let sys = perturb(&linear(-1.0), 0.1);
        let cfg = SimConfig::default()
            .with_horizon(1.0)
            .with_disturbance(Disturbance::RandomUniformBall { seed: 9 });
        assert!(solve_batch(&sys, &[], &cfg).is_empty());
        let x0s: Vec<Vector> = (0..100).map(|i| vector(&[i as f64 / 50.0 - 1.0])).collect();
        let a = solve_batch(&sys, &x0s, &cfg);
        let b = solve_batch(&sys, &x0s, &cfg);
        for (ra, rb) in a.iter().zip(b.iter()) {
            assert_eq!(ra.as_ref().unwrap().arc, rb.as_ref().unwrap().arc);
        }
        let single = solve_batch(&sys, &x0s[..1], &cfg);
        let direct = solve(
            &sys,
            &x0s[0],
            &SimConfig {
                disturbance: Disturbance::RandomUniformBall {
                    seed: derive_seed(9, 0),
                },
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(single[0].as_ref().unwrap().arc, direct.arc);
    }

    #[test]
    fn disturbance_respects_delta() {
        let sys = perturb(&linear(0.0), 0.2);
        let cfg = SimConfig::default()
            .with_horizon(1.0)
            .with_disturbance(Disturbance::RandomUniformBall { seed: 1 });
        let rep = solve(&sys, &vector(&[0.0]), &cfg).unwrap();
        let p = &rep.arc.phases[0];
        for k in 0..p.len() - 1 {
            let slope = (p.states[k + 1][0] - p.states[k][0]) / (p.times[k + 1] - p.times[k]);
            assert!(slope.abs() <= 0.2 + 1e-9);
        }
    }

    #[test]
    fn reachable_sample_at_zero_is_initial_points() {
        let sys = linear(-1.0);
        let x0 = SetRegion::boxed(&[0.0], &[1.0]).unwrap();
        let cloud = reachable_sample(&sys, &x0, 0.0, 5, 3, &SimConfig::default(), 2);
        assert_eq!(cloud.len(), 15);
        for p in &cloud {
            assert!(x0.contains(p, 1e-12));
        }
    }

    #[test]
    fn closeness_basics() {
        let cfg = SimConfig::default().with_horizon(1.0).with_step(0.01);
        let a = solve(&linear(0.0), &vector(&[0.0]), &cfg).unwrap().arc;
        let b = solve(&linear(0.0), &vector(&[0.3]), &cfg).unwrap().arc;
        for eps in [1e-9, 0.1, 1.0] {
            assert!(closeness(&a, &a, 1.0, eps));
        }
        assert!(!closeness(&a, &b, 1.0, 0.3));
        assert!(closeness(&a, &b, 1.0, 0.30001));
        assert!(!closeness(&a, &b, 1.0, 0.2));
    }

    #[test]
    fn perturbed_companion_linear() {
        let cfg = SimConfig::default().with_horizon(2.0).with_step(0.01);
        let phi = solve(&linear(-1.0), &vector(&[1.0]), &cfg).unwrap().arc;
        let same = construct_perturbed(&phi, phi.initial(), 2.0).unwrap();
        for (a, b) in same.samples().zip(phi.samples()) {
            assert_eq!(a.x, b.x);
        }
        let psi = construct_perturbed(&phi, &vector(&[1.2]), 2.0).unwrap();
        let mid = (psi.eval(1.0, 0).unwrap() - phi.eval(1.0, 0).unwrap())[0];
        assert!((mid - 0.1).abs() < 1e-12);
        assert_eq!(psi.final_state(), &phi.eval(2.0, 0).unwrap());
        assert!(matches!(
            construct_perturbed(&phi, &vector(&[1.2]), 3.0),
            Err(Error::HorizonTooShort { .. })
        ));
    }

    #[test]
    fn verify_solution_detects_injected_displacement() {
        let sys = perturb(&linear(-1.0), 0.01);
        let cfg = SimConfig::default().with_horizon(1.0).with_step(0.01);
        let mut arc = solve(&sys, &vector(&[1.0]), &cfg).unwrap().arc;
        let ok = verify_solution(&sys, &arc, 1e-6).unwrap();
        assert_eq!(ok.verdict, crate::report::Verdict::Pass);
        arc.phases[0].states[50][0] += 10.0 * 0.01;
        let bad = verify_solution(&sys, &arc, 1e-6).unwrap();
        assert_eq!(bad.verdict, crate::report::Verdict::Fail);
        let w = bad.condition("flow-slope").unwrap().witness.clone().unwrap();
        assert!((w.t - 0.49).abs() < 1e-9);
    }

    #[test]
    fn slope_defect_is_second_order() {
        let sys = linear(-1.0);
        let defect = |h: f64| {
            let cfg = SimConfig::default().with_horizon(1.0).with_step(h);
            let arc = solve(&sys, &vector(&[1.0]), &cfg).unwrap().arc;
            let rep = verify_solution(&sys, &arc, 0.0).unwrap();
            let c = rep.condition("flow-slope").unwrap();
            c.margin.max(0.0)
        };
        let d1 = defect(1e-2);
        let d2 = defect(1e-3);
        let order = (d1 / d2).log10();
        assert!((order - 2.0).abs() < 0.2, "defects {d1} {d2}");
        let fitted = d1 / 1e-4;
        let cfg = SimConfig::default().with_horizon(1.0).with_step(1e-2);
        let arc = solve(&sys, &vector(&[1.0]), &cfg).unwrap().arc;
        let rep = verify_solution(&sys, &arc, 1.01 * fitted * 1e-4).unwrap();
        assert_eq!(rep.verdict, crate::report::Verdict::Pass);
    }

    #[test]
    fn companion_bound_round_trip() {
        let d = companion_delta(0.01, 0.0, 2.0, 1.0, 1.0);
        assert!((d - 0.02).abs() < 1e-15);
        assert!((companion_radius(d, 0.0, 2.0, 1.0, 1.0) - 0.01).abs() < 1e-15);
    }
}
