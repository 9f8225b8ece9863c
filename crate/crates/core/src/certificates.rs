//! Lyapunov and barrier certificate checks on grids, falsification by search,
//! and gradient validation.

use std::collections::BTreeMap;
use std::f64::consts::E;
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{AxisBox, ProperIndicator, SetRegion, Vector, DEFAULT_TOL};
use crate::hybrid::{HybridArc, HybridSystem};
use crate::monitor::StabSafeSpec;
use crate::report::{finite, CheckReport, ConditionResult, Verdict, Witness, MARGIN_TOL};

pub type ScalarFn = Arc<dyn Fn(&Vector) -> f64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
pub type RhoFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct ScalarField {
    pub name: String,
    pub value: ScalarFn,
    pub grad: Option<GradFn>,
    pub fd_step: f64,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("name", &self.name)
            .field("analytic_grad", &self.grad.is_some())
            .field("fd_step", &self.fd_step)
            .finish()
    }
}

impl ScalarField {
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(&Vector) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            value: Arc::new(value),
            grad: None,
            fd_step: 1e-5,
        }
    }

    pub fn with_grad(mut self, grad: impl Fn(&Vector) -> Vector + Send + Sync + 'static) -> Self {
        self.grad = Some(Arc::new(grad));
        self
    }

    pub fn eval(&self, x: &Vector) -> f64 {
        (self.value)(x)
    }

    /// Analytic gradient when present, central differences otherwise.
    pub fn gradient(&self, x: &Vector) -> Vector {
        match &self.grad {
            Some(g) => g(x),
            None => self.fd_gradient(x),
        }
    }

    /// Fourth-order central differences with step `fd_step`.
    pub fn fd_gradient(&self, x: &Vector) -> Vector {
        let h = self.fd_step;
        Vector::from_fn(x.len(), |i, _| {
            let at = |k: f64| {
                let mut y = x.clone();
                y[i] += k * h;
                self.eval(&y)
            };
            (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * h)
        })
    }
}

/// Max over probes and axes of |analytic − central difference| / max(1, |analytic|).
pub fn grad_check(f: &ScalarField, probes: &[Vector]) -> Result<f64> {
    let g = f
        .grad
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no analytic gradient", f.name)))?;
    let mut worst: f64 = 0.0;
    for x in probes {
        let a = g(x);
        let n = f.fd_gradient(x);
        for i in 0..x.len() {
            worst = worst.max((a[i] - n[i]).abs() / a[i].abs().max(1.0));
        }
    }
    Ok(worst)
}

#[derive(Clone)]
pub struct CertificatePair {
    pub v: ScalarField,
    pub b: Option<ScalarField>,
    pub rho: Option<RhoFn>,
    pub omega: Option<ProperIndicator>,
    /// Open certificate domain O.
    pub region: SetRegion,
}

impl fmt::Debug for CertificatePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CertificatePair")
            .field("v", &self.v)
            .field("b", &self.b)
            .field("rho", &self.rho.is_some())
            .field("omega", &self.omega)
            .field("region", &self.region)
            .finish()
    }
}

impl CertificatePair {
    pub fn new(v: ScalarField, region: SetRegion) -> Self {
        Self {
            v,
            b: None,
            rho: None,
            omega: None,
            region,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GridSpec {
    pub bbox: AxisBox,
    pub counts: Vec<usize>,
    pub refinement_depth: usize,
    /// Number of worst points refined at each level.
    pub refine_k: usize,
    /// Points with |x|_A below this radius are left out of decrease checks.
    pub attractor_exclusion: f64,
    pub tol: f64,
}

impl GridSpec {
    pub fn new(bbox: AxisBox, counts: Vec<usize>) -> Self {
        Self {
            bbox,
            counts,
            refinement_depth: 2,
            refine_k: 8,
            attractor_exclusion: 0.0,
            tol: MARGIN_TOL,
        }
    }

    pub fn uniform(bbox: AxisBox, n: usize) -> Self {
        let d = bbox.dim();
        Self::new(bbox, vec![n; d])
    }

    fn spacing(&self) -> Vector {
        Vector::from_fn(self.bbox.dim(), |i, _| {
            let c = self.counts[i].max(2) as f64 - 1.0;
            (self.bbox.hi[i] - self.bbox.lo[i]) / c
        })
    }
}

/// Condition identifiers understood by the falsifier.
pub const CONDITIONS: [&str; 7] = [
    "single-flow",
    "single-jump",
    "pair-flow",
    "pair-jump",
    "iv-flow",
    "iv-jump",
    "iii",
];

fn ball_directions(dim: usize, delta: f64, grad: &Vector) -> Vec<Vector> {
    let mut out = vec![Vector::zeros(dim)];
    if delta > 0.0 {
        for i in 0..dim {
            let mut e = Vector::zeros(dim);
            e[i] = delta;
            out.push(e.clone());
            out.push(-e);
        }
        let n = grad.norm();
        if n > 0.0 {
            out.push(grad * (delta / n));
            out.push(grad * (-delta / n));
        }
    }
    out
}

/// max_d ∇F·(f + d) over the worst-case disturbance directions.
fn worst_flow_derivative(sys: &HybridSystem, f: &ScalarField, x: &Vector, maximize: bool) -> f64 {
    let g = f.gradient(x);
    let fx = sys.flow(x);
    let vals = ball_directions(x.len(), sys.delta, &g)
        .into_iter()
        .map(|d| g.dot(&(&fx + d)));
    if maximize {
        vals.fold(f64::NEG_INFINITY, f64::max)
    } else {
        vals.fold(f64::INFINITY, f64::min)
    }
}

/// Extreme of F(g + d) over jump candidates and disturbance directions.
fn worst_jump_value(sys: &HybridSystem, f: &ScalarField, x: &Vector, maximize: bool) -> f64 {
    let mut best = if maximize {
        f64::NEG_INFINITY
    } else {
        f64::INFINITY
    };
    for g in sys.jump(x) {
        let grad = f.gradient(&g);
        for d in ball_directions(x.len(), sys.delta, &grad) {
            let v = f.eval(&(&g + d));
            best = if maximize { best.max(v) } else { best.min(v) };
        }
    }
    best
}

struct Ctx<'a> {
    sys: &'a HybridSystem,
    cert: &'a CertificatePair,
    attractor: Option<&'a SetRegion>,
}

impl Ctx<'_> {
    fn in_o(&self, x: &Vector) -> bool {
        self.cert.region.contains(x, 0.0)
    }

    fn in_flow(&self, x: &Vector) -> bool {
        self.in_o(x) && self.sys.in_flow_set(x, DEFAULT_TOL)
    }

    fn in_jump(&self, x: &Vector) -> bool {
        self.in_o(x) && self.sys.in_jump_set(x, DEFAULT_TOL)
    }

    fn dist_a(&self, x: &Vector) -> f64 {
        self.attractor
            .and_then(|a| a.dist(x).ok())
            .unwrap_or(0.0)
    }

    fn rho(&self, x: &Vector) -> f64 {
        match &self.cert.rho {
            Some(r) => r(self.dist_a(x)),
            None => 0.0,
        }
    }

    fn barrier(&self) -> Result<&ScalarField> {
        self.cert.b.as_ref().ok_or(Error::MissingBarrier)
    }

    /// Margin of a named condition at x; None when x is outside the
    /// condition's domain.
    fn margin(&self, id: &str, x: &Vector) -> Result<Option<f64>> {
        let v = &self.cert.v;
        Ok(match id {
            "single-flow" if self.in_flow(x) => {
                Some(worst_flow_derivative(self.sys, v, x, true) + v.eval(x))
            }
            "single-jump" if self.in_jump(x) => {
                Some(worst_jump_value(self.sys, v, x, true) - v.eval(x) / E)
            }
            "pair-flow" if self.in_flow(x) => {
                Some(worst_flow_derivative(self.sys, v, x, true) + self.rho(x))
            }
            "pair-jump" if self.in_jump(x) => {
                Some(worst_jump_value(self.sys, v, x, true) - v.eval(x) + self.rho(x))
            }
            "iv-flow" if self.in_flow(x) => {
                Some(-worst_flow_derivative(self.sys, self.barrier()?, x, false))
            }
            "iv-jump" if self.in_jump(x) => {
                let b = self.barrier()?;
                Some(b.eval(x) - worst_jump_value(self.sys, b, x, false))
            }
            "iii" => Some(self.barrier()?.eval(x)),
            "single-flow" | "single-jump" | "pair-flow" | "pair-jump" | "iv-flow" | "iv-jump" => {
                None
            }
            other => return Err(Error::InvalidArgument(format!("unknown condition {other}"))),
        })
    }
}

#[derive(Clone, Debug)]
struct Scan {
    /// (margin, point) for every applicable probe.
    hits: Vec<(f64, Vector)>,
}

impl Scan {
    fn worst(&self) -> Option<&(f64, Vector)> {
        self.hits.iter().max_by(|a, b| a.0.total_cmp(&b.0))
    }
}

fn scan_points<F>(points: &[Vector], eval: F) -> Scan
where
    F: Fn(&Vector) -> Option<f64> + Sync,
{
    let hits = points
        .par_iter()
        .filter_map(|x| eval(x).map(|m| (m, x.clone())))
        .collect();
    Scan { hits }
}

/// Grid scan followed by local sub-grids around the worst points. Earlier
/// probes are kept, so refinement can only add violations.
fn scan_grid<F>(grid: &GridSpec, base: &[Vector], eval: F) -> Scan
where
    F: Fn(&Vector) -> Option<f64> + Sync,
{
    let mut scan = scan_points(base, &eval);
    let dim = grid.bbox.dim();
    let mut spacing = grid.spacing();
    for _ in 0..grid.refinement_depth {
        spacing /= 2.0;
        let mut order: Vec<usize> = (0..scan.hits.len()).collect();
        order.sort_by(|&a, &b| scan.hits[b].0.total_cmp(&scan.hits[a].0));
        let mut fresh = Vec::new();
        for &i in order.iter().take(grid.refine_k) {
            let c = &scan.hits[i].1;
            for code in 0..3usize.pow(dim as u32) {
                let mut c2 = code;
                let p = Vector::from_fn(dim, |_, _| {
                    let o = (c2 % 3) as f64 - 1.0;
                    c2 /= 3;
                    o
                });
                if p.iter().all(|&o| o == 0.0) {
                    continue;
                }
                let q = grid.bbox.clamp(&(c + p.component_mul(&spacing)));
                fresh.push(q);
            }
        }
        let more = scan_points(&fresh, &eval);
        scan.hits.extend(more.hits);
    }
    scan
}

fn condition_from_scan(id: &str, scan: &Scan, tol: f64) -> ConditionResult {
    match scan.worst() {
        Some((m, x)) => {
            ConditionResult::from_margin(id, *m, scan.hits.len(), Some(Witness::point(x)), tol)
        }
        None => ConditionResult::from_margin(id, 0.0, 0, None, tol),
    }
}

/// Monotone envelopes through the origin for sampled pairs (s, V):
/// α1(s) = min{V_i : s_i ≥ s}, α2(s) = max{V_i : s_i ≤ s}. A class-K lower
/// envelope exists on the samples iff V vanishes on s = 0 and is positive for
/// s > 0.
fn sandwich(id: &str, mut pairs: Vec<(f64, f64, Vector)>, tol: f64) -> ConditionResult {
    pairs.retain(|p| p.0.is_finite() && p.1.is_finite());
    if pairs.is_empty() {
        return ConditionResult::from_margin(id, 0.0, 0, None, tol);
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut worst = (f64::NEG_INFINITY, None);
    for (s, v, x) in &pairs {
        let m = if *s <= 1e-12 {
            *v
        } else if *v > 0.0 {
            -v
        } else {
            s.max(2.0 * tol)
        };
        if m > worst.0 {
            worst = (m, Some(Witness::point(x)));
        }
    }
    let n = pairs.len();
    let mut lower = vec![0.0; n];
    let mut run = f64::INFINITY;
    for i in (0..n).rev() {
        run = run.min(pairs[i].1);
        lower[i] = run;
    }
    let mut c = ConditionResult::from_margin(id, worst.0, n, worst.1, tol);
    let mut upper = f64::NEG_INFINITY;
    let marks = 8usize;
    let mut next_mark = 1usize;
    for (i, (s, v, _)) in pairs.iter().enumerate() {
        upper = upper.max(*v);
        if i + 1 >= next_mark * n / marks && next_mark <= marks {
            c.values.insert(format!("alpha1@{s:.4e}"), finite(lower[i]));
            c.values.insert(format!("alpha2@{s:.4e}"), finite(upper));
            next_mark += 1;
        }
    }
    c
}

fn region_points(grid: &GridSpec) -> Result<Vec<Vector>> {
    if grid.counts.len() != grid.bbox.dim() {
        return Err(Error::DimensionMismatch {
            what: "grid counts".into(),
            expected: grid.bbox.dim(),
            found: grid.counts.len(),
        });
    }
    grid.bbox.grid(&grid.counts)
}

/// Single-function conditions: flow decrease ∇V·f ≤ −V on
/// C_δ ∩ O, jump decrease V(g) ≤ V(x)/e on D_δ ∩ O, and the class-K sandwich
/// against the proper indicator.
pub fn check_single_v(
    sys_delta: &HybridSystem,
    cert: &CertificatePair,
    grid: &GridSpec,
) -> Result<CheckReport> {
    let omega = cert.omega.as_ref().ok_or(Error::MissingIndicator)?;
    let ctx = Ctx {
        sys: sys_delta,
        cert,
        attractor: Some(&omega.target),
    };
    let base = region_points(grid)?;
    let eval = |id: &'static str| {
        let ctx = &ctx;
        move |x: &Vector| ctx.margin(id, x).ok().flatten()
    };
    let flow = scan_grid(grid, &base, eval("single-flow"));
    let jump = scan_grid(grid, &base, eval("single-jump"));
    let pairs: Vec<(f64, f64, Vector)> = base
        .iter()
        .filter(|x| ctx.in_o(x))
        .map(|x| (omega.eval(x), cert.v.eval(x), x.clone()))
        .collect();
    let mut conditions = vec![
        condition_from_scan("flow", &flow, grid.tol),
        condition_from_scan("jump", &jump, grid.tol),
        sandwich("sandwich", pairs, grid.tol),
    ];
    let mut notes = Vec::new();
    for c in conditions.iter_mut() {
        if c.samples == 0 && c.id != "sandwich" {
            c.verdict = Verdict::Pass;
            notes.push(format!("{}: no grid point in its domain; vacuous", c.id));
        }
    }
    Ok(CheckReport::from_conditions("single-v", conditions, notes))
}

/// Strict decrease fitted as ∇V·f ≤ −c|x|_A; PASS iff the largest such c on
/// the grid is positive.
fn fitted_decrease(id: &str, scan: &Scan, ctx: &Ctx<'_>, tol: f64) -> ConditionResult {
    let mut c_fit = f64::INFINITY;
    let mut at = None;
    let mut worst_on_a = f64::NEG_INFINITY;
    for (m, x) in &scan.hits {
        let r = ctx.dist_a(x);
        if r > 0.0 {
            let c = -m / r;
            if c < c_fit {
                c_fit = c;
                at = Some(Witness::point(x));
            }
        } else {
            worst_on_a = worst_on_a.max(*m);
        }
    }
    if scan.hits.is_empty() {
        return ConditionResult::from_margin(id, 0.0, 0, None, tol);
    }
    let margin = if c_fit.is_finite() { -c_fit } else { worst_on_a };
    let mut res = ConditionResult::from_margin(id, margin, scan.hits.len(), at, tol)
        .with_value("fitted_c", c_fit);
    let fails = !(c_fit > 0.0) || worst_on_a > tol;
    res.verdict = if fails { Verdict::Fail } else { Verdict::Pass };
    res
}

/// The split (V, B) conditions (i)–(iv), each on its own region.
pub fn check_pair_vb(
    sys_delta: &HybridSystem,
    cert: &CertificatePair,
    spec: &StabSafeSpec,
    grid: &GridSpec,
) -> Result<CheckReport> {
    let b = cert.b.as_ref().ok_or(Error::MissingBarrier)?;
    let ctx = Ctx {
        sys: sys_delta,
        cert,
        attractor: Some(&spec.attractor),
    };
    let tol = grid.tol;
    let base = region_points(grid)?;
    let excl = grid.attractor_exclusion;
    let mut notes = Vec::new();

    let decrease = |id: &'static str| {
        let ctx = &ctx;
        move |x: &Vector| {
            if ctx.dist_a(x) < excl {
                return None;
            }
            ctx.margin(id, x).ok().flatten()
        }
    };
    let flow_v = scan_grid(grid, &base, decrease("pair-flow"));
    let jump_v = scan_grid(grid, &base, decrease("pair-jump"));
    let (i_flow, i_jump) = if cert.rho.is_some() {
        (
            condition_from_scan("i-flow", &flow_v, tol),
            condition_from_scan("i-jump", &jump_v, tol),
        )
    } else {
        notes.push("no rho supplied; decrease fitted as -c|x|_A with c > 0 required".into());
        (
            fitted_decrease("i-flow", &flow_v, &ctx, tol),
            fitted_decrease("i-jump", &jump_v, &ctx, tol),
        )
    };
    let pairs: Vec<(f64, f64, Vector)> = base
        .iter()
        .filter(|x| ctx.in_o(x))
        .map(|x| (ctx.dist_a(x), cert.v.eval(x), x.clone()))
        .collect();
    let i_sandwich = sandwich("i-sandwich", pairs, tol);

    let outside: Vec<Vector> = base
        .iter()
        .filter(|x| !ctx.in_o(x) && sys_delta.in_flow_set(x, DEFAULT_TOL))
        .cloned()
        .collect();
    let bad_outside = outside
        .iter()
        .filter(|x| ctx.dist_a(x) >= excl)
        .filter(|x| worst_flow_derivative(sys_delta, &cert.v, x, true) + ctx.rho(x) > tol)
        .count();
    if bad_outside > 0 {
        notes.push(format!(
            "V flow decrease violated at {bad_outside} sampled points of C outside O (not part of the verdict)"
        ));
    }

    let s_in_o = scan_points(&base, |x| {
        if b.eval(x) < 0.0 {
            return None;
        }
        Some(if cert.region.contains(x, 0.0) {
            -cert.region.depth(x).unwrap_or(0.0)
        } else {
            cert.region.dist(x).unwrap_or(1.0).max(2.0 * tol)
        })
    });
    let x0_points = spec.x0.points(&sys_delta.bounds, 256, 0);
    let x0_in_s = scan_points(&x0_points, |x| Some(-b.eval(x)));

    let u_box = spec
        .unsafe_set
        .sampling_box(&grid.bbox.hull(&sys_delta.bounds))
        .filter(AxisBox::is_finite);
    let u_points = match u_box {
        Some(ub) => ub.grid(&grid.counts)?,
        None => Vec::new(),
    };
    let unsafe_scan = scan_points(&u_points, |x| {
        if spec.unsafe_set.contains(x, 0.0) {
            Some(b.eval(x))
        } else {
            None
        }
    });
    let mut iii = condition_from_scan("iii", &unsafe_scan, 0.0);
    if iii.samples > 0 && iii.margin >= 0.0 {
        iii.verdict = Verdict::Fail;
    }
    if iii.samples == 0 {
        iii.verdict = Verdict::Pass;
        notes.push("iii: no sampled point of U; vacuous".into());
    }

    let iv_flow = scan_grid(grid, &base, |x| ctx.margin("iv-flow", x).ok().flatten());
    let iv_jump = scan_grid(grid, &base, |x| ctx.margin("iv-jump", x).ok().flatten());

    let mut conditions = vec![
        i_sandwich,
        i_flow,
        i_jump,
        condition_from_scan("ii-S-in-O", &s_in_o, tol),
        condition_from_scan("ii-X0-in-S", &x0_in_s, tol),
        iii,
        condition_from_scan("iv-flow", &iv_flow, tol),
        condition_from_scan("iv-jump", &iv_jump, tol),
    ];
    for c in conditions.iter_mut() {
        if c.samples == 0 && c.verdict == Verdict::Inconclusive && c.id.contains("jump") {
            c.verdict = Verdict::Pass;
            notes.push(format!("{}: no grid point of D in O; vacuous", c.id));
        }
    }
    let mut report = CheckReport::from_conditions("pair-vb", conditions, notes);
    let mut extra = BTreeMap::new();
    if let Some(c) = report.condition("i-flow").and_then(|c| c.values.get("fitted_c")) {
        extra.insert("fitted_c_flow".to_string(), *c);
    }
    if let Some(c) = report.condition("i-jump").and_then(|c| c.values.get("fitted_c")) {
        extra.insert("fitted_c_jump".to_string(), *c);
    }
    report.stats.extra = extra;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct FalsifyOutcome {
    pub counterexample: Option<(Vector, f64)>,
    pub best: Option<(Vector, f64)>,
    pub evaluations: usize,
    pub verdict: Verdict,
}

/// Search for a violation of one condition: Latin-hypercube probes, a coarse
/// grid, then coordinate descent from the worst points.
pub fn falsify(
    sys_delta: &HybridSystem,
    cert: &CertificatePair,
    condition_id: &str,
    region: &SetRegion,
    budget: usize,
    seed: u64,
) -> Result<FalsifyOutcome> {
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be >= 1".into()));
    }
    let ctx = Ctx {
        sys: sys_delta,
        cert,
        attractor: cert.omega.as_ref().map(|w| &w.target),
    };
    ctx.margin(condition_id, &sys_delta.bounds.center())?;
    let bbox = region
        .sampling_box(&sys_delta.bounds)
        .filter(AxisBox::is_finite)
        .ok_or_else(|| Error::InvalidArgument("falsify region needs a finite box".into()))?;
    let dim = bbox.dim();
    let eval = |x: &Vector| -> Option<f64> {
        if !region.contains(x, DEFAULT_TOL) {
            return None;
        }
        ctx.margin(condition_id, x).ok().flatten().filter(|m| !m.is_nan())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = 0usize;
    let mut hits: Vec<(f64, Vector)> = Vec::new();

    let n_lhs = (budget / 2).max(1);
    let lhs = bbox.latin_hypercube(&mut rng, n_lhs)?;
    used += lhs.len();
    hits.extend(scan_points(&lhs, eval).hits);

    let remaining = budget.saturating_sub(used);
    let m = ((remaining / 2) as f64).powf(1.0 / dim as f64).floor() as usize;
    if m >= 2 {
        let coarse = bbox.grid(&vec![m; dim])?;
        used += coarse.len();
        hits.extend(scan_points(&coarse, eval).hits);
    }

    hits.sort_by(|a, b| b.0.total_cmp(&a.0));
    let starts: Vec<(f64, Vector)> = hits.iter().take(5).cloned().collect();
    let widths = bbox.widths();
    let mut refined = Vec::new();
    let per_start = budget.saturating_sub(used) / starts.len().max(1);
    for (m0, x0) in starts {
        let (mut cur_m, mut cur) = (m0, x0);
        let mut step = &widths / (m.max(4) as f64);
        let mut spent = 0usize;
        while spent + 2 <= per_start && step.amax() > 1e-9 * widths.amax().max(1.0) {
            let mut moved = false;
            for i in 0..dim {
                for sgn in [1.0, -1.0] {
                    if spent >= per_start {
                        break;
                    }
                    let mut cand = cur.clone();
                    cand[i] += sgn * step[i];
                    let cand = bbox.clamp(&cand);
                    spent += 1;
                    if let Some(mc) = eval(&cand) {
                        if mc > cur_m {
                            cur_m = mc;
                            cur = cand;
                            moved = true;
                        }
                    }
                }
            }
            if !moved {
                step /= 2.0;
            }
        }
        used += spent;
        refined.push((cur_m, cur));
    }
    hits.extend(refined);
    let best = hits
        .into_iter()
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(m, x)| (x, m));
    let counterexample = best.clone().filter(|(_, m)| *m > MARGIN_TOL);
    let verdict = if counterexample.is_some() {
        Verdict::Fail
    } else if best.is_some() && used >= 8 * (1usize << dim.min(10)) {
        Verdict::Pass
    } else {
        Verdict::Inconclusive
    };
    Ok(FalsifyOutcome {
        counterexample,
        best,
        evaluations: used,
        verdict,
    })
}

#[derive(Clone, Debug)]
pub struct DecrementSeries {
    /// (t + j, V) per stored sample.
    pub series: Vec<(f64, f64)>,
    pub bound_ok: bool,
    pub first_violation: Option<f64>,
}

/// Compares V along an arc with V(φ(0,0)) e^{−(t+j)/3}.
pub fn decrement_along_arc(cert: &CertificatePair, arc: &HybridArc, tol: f64) -> DecrementSeries {
    let v0 = cert.v.eval(arc.initial());
    let mut series = Vec::with_capacity(arc.sample_count());
    let mut first_violation = None;
    for s in arc.samples() {
        let tt = s.total_time();
        let v = cert.v.eval(s.x);
        if first_violation.is_none() && v > v0 * (-tt / 3.0).exp() + tol {
            first_violation = Some(tt);
        }
        series.push((tt, v));
    }
    DecrementSeries {
        series,
        bound_ok: first_violation.is_none(),
        first_violation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_proper_indicator, vector};
    use crate::hybrid::{make_system, Phase, Termination};
    use crate::monitor::InitialSet;
    use crate::sim::{solve, SimConfig};

    fn quad() -> ScalarField {
        ScalarField::new("|x|^2", |x: &Vector| x.norm_squared()).with_grad(|x: &Vector| x * 2.0)
    }

    fn linear(rate: f64) -> HybridSystem {
        make_system(
            2,
            SetRegion::whole(2),
            Arc::new(move |x: &Vector| x * rate),
            SetRegion::empty(),
            Arc::new(|x: &Vector| vec![x.clone()]),
            AxisBox::from_slices(&[-20.0, -20.0], &[20.0, 20.0]).unwrap(),
        )
        .unwrap()
    }

    fn contraction_cert() -> CertificatePair {
        let o = SetRegion::ball(vector(&[0.0, 0.0]), 10.0).unwrap();
        let a = SetRegion::point(vector(&[0.0, 0.0]));
        let mut c = CertificatePair::new(quad(), o.clone());
        c.omega = Some(make_proper_indicator(&a, &o, 1e-9).unwrap());
        c
    }

    fn grid() -> GridSpec {
        GridSpec::uniform(AxisBox::from_slices(&[-5.0, -5.0], &[5.0, 5.0]).unwrap(), 21)
    }

    #[test]
    fn grad_check_examples() {
        assert!(grad_check(&quad(), &[vector(&[1.0, 2.0])]).unwrap() <= 1e-9);
        let k = ScalarField::new("k", |_: &Vector| 3.0).with_grad(|x: &Vector| x * 0.0);
        assert_eq!(grad_check(&k, &[vector(&[1.0, 2.0])]).unwrap(), 0.0);
        assert!(grad_check(&ScalarField::new("n", |_: &Vector| 0.0), &[]).is_err());
    }

    #[test]
    fn contraction_passes() {
        let r = check_single_v(&linear(-1.0), &contraction_cert(), &grid()).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
    }

    #[test]
    fn slow_contraction_fails_with_exact_margin() {
        let r = check_single_v(&linear(-0.25), &contraction_cert(), &grid()).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        let ce = &r.counterexamples[0];
        let x = ce.witness.state();
        assert!((ce.margin - x.norm_squared() / 2.0).abs() <= 1e-9);
    }

    #[test]
    fn missing_indicator() {
        let mut c = contraction_cert();
        c.omega = None;
        assert!(matches!(
            check_single_v(&linear(-1.0), &c, &grid()),
            Err(Error::MissingIndicator)
        ));
    }

    #[test]
    fn halving_jump_passes() {
        let sys = make_system(
            2,
            SetRegion::empty(),
            Arc::new(|x: &Vector| x * 0.0),
            SetRegion::whole(2),
            Arc::new(|x: &Vector| vec![x * 0.5]),
            AxisBox::from_slices(&[-20.0, -20.0], &[20.0, 20.0]).unwrap(),
        )
        .unwrap();
        let r = check_single_v(&sys, &contraction_cert(), &grid()).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
        let j = r.condition("jump").unwrap();
        assert!(j.samples > 0);
    }

    #[test]
    fn missing_barrier() {
        let spec = StabSafeSpec {
            x0: InitialSet::Points(vec![vector(&[1.0, 0.0])]),
            unsafe_set: SetRegion::empty(),
            attractor: SetRegion::point(vector(&[0.0, 0.0])),
            eps_levels: vec![1.0],
        };
        assert!(matches!(
            check_pair_vb(&linear(-1.0), &contraction_cert(), &spec, &grid()),
            Err(Error::MissingBarrier)
        ));
    }

    #[test]
    fn falsifier_finds_and_misses() {
        let region = SetRegion::boxed(&[-5.0, -5.0], &[5.0, 5.0]).unwrap();
        let out = falsify(&linear(-0.25), &contraction_cert(), "single-flow", &region, 400, 1)
            .unwrap();
        let (x, m) = out.counterexample.unwrap();
        assert!(m > 0.0);
        assert!((m - x.norm_squared() / 2.0).abs() < 1e-9);
        assert_eq!(out.verdict, Verdict::Fail);

        let slack = SetRegion::boxed(&[1.0, 1.0], &[5.0, 5.0]).unwrap();
        let out = falsify(&linear(-1.0), &contraction_cert(), "single-flow", &slack, 400, 1)
            .unwrap();
        assert!(out.counterexample.is_none());
        assert!(out.best.unwrap().1 <= -0.1);

        let out = falsify(&linear(-0.25), &contraction_cert(), "single-flow", &region, 1, 1)
            .unwrap();
        assert!(out.evaluations <= 1);
        assert!(out.verdict != Verdict::Pass);
    }

    #[test]
    fn decrement_bound() {
        let cfg = SimConfig::default().with_horizon(3.0).with_step(0.01);
        let arc = solve(&linear(-1.0), &vector(&[1.0, 1.0]), &cfg).unwrap().arc;
        assert!(decrement_along_arc(&contraction_cert(), &arc, 1e-12).bound_ok);

        let mut p = Phase::start(0.0, vector(&[1.0, 0.0]));
        p.push(1.0, vector(&[1.0, 0.0]));
        p.push(2.0, vector(&[1.0, 0.0]));
        let flat = HybridArc {
            phases: vec![p],
            termination: Termination::HorizonReached,
            snapped_jumps: vec![],
        };
        let d = decrement_along_arc(&contraction_cert(), &flat, 1e-12);
        assert!(!d.bound_ok);
        assert_eq!(d.first_violation, Some(1.0));

        let still = HybridArc {
            phases: vec![Phase::start(0.0, vector(&[0.0, 0.0]))],
            termination: Termination::HorizonReached,
            snapped_jumps: vec![],
        };
        assert!(decrement_along_arc(&contraction_cert(), &still, 0.0).bound_ok);
    }
}
