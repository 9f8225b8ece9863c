//! Sample-and-hold hybridization of input-affine plants and QP-based input
//! selection with CLF-CBF rows.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::certificates::ScalarField;
use crate::error::{Error, Result};
use crate::geometry::{AxisBox, SetRegion, Vector};
use crate::hybrid::{make_system, HybridArc, HybridSystem, VectorField};
use crate::sim::{solve, SimConfig, SolveReport};

pub type InputMatrix = Arc<dyn Fn(&Vector) -> DMatrix<f64> + Send + Sync>;

/// ẋ = f0(x) + g_in(x) u with u in a box.
#[derive(Clone)]
pub struct ControlledPlant {
    pub dim_x: usize,
    pub dim_u: usize,
    pub drift: VectorField,
    pub input_matrix: InputMatrix,
    pub input_box: AxisBox,
    /// Simulation bounds on x.
    pub state_box: AxisBox,
}

impl fmt::Debug for ControlledPlant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlledPlant")
            .field("dim_x", &self.dim_x)
            .field("dim_u", &self.dim_u)
            .field("input_box", &self.input_box)
            .field("state_box", &self.state_box)
            .finish_non_exhaustive()
    }
}

impl ControlledPlant {
    pub fn new(
        drift: VectorField,
        input_matrix: InputMatrix,
        input_box: AxisBox,
        state_box: AxisBox,
    ) -> Result<Self> {
        let dim_x = state_box.dim();
        let dim_u = input_box.dim();
        let c = state_box.center();
        let g = input_matrix(&c);
        if drift(&c).len() != dim_x || g.nrows() != dim_x || g.ncols() != dim_u {
            return Err(Error::DimensionMismatch {
                what: "plant".into(),
                expected: dim_x,
                found: g.nrows(),
            });
        }
        Ok(Self {
            dim_x,
            dim_u,
            drift,
            input_matrix,
            input_box,
            state_box,
        })
    }

    pub fn vector_field(&self, x: &Vector, u: &Vector) -> Vector {
        (self.drift)(x) + (self.input_matrix)(x) * u
    }

    /// (L_f h, L_g h) for a scalar field h.
    pub fn lie(&self, h: &ScalarField, x: &Vector) -> (f64, Vector) {
        let grad = h.gradient(x);
        let lf = grad.dot(&(self.drift)(x));
        let lg = (self.input_matrix)(x).transpose() * grad;
        (lf, lg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleHoldConfig {
    pub period: f64,
    pub sigma: f64,
    /// Per-input rate limit, in units per unit time.
    pub rate_limits: Vec<Option<f64>>,
}

impl Default for SampleHoldConfig {
    fn default() -> Self {
        Self {
            period: 0.5,
            sigma: 0.07,
            rate_limits: Vec::new(),
        }
    }
}

/// Linear row `a · u <= b`.
pub type Row = (Vector, f64);

/// min uᵀPu + q·u + c over lo <= u <= hi and the rows.
#[derive(Clone, Debug, PartialEq)]
pub struct QPProblem {
    pub p: DMatrix<f64>,
    pub q: Vector,
    pub c: f64,
    pub rows: Vec<Row>,
    pub lo: Vector,
    pub hi: Vector,
}

const FEAS_TOL: f64 = 1e-10;

impl QPProblem {
    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn cost(&self, u: &Vector) -> f64 {
        (u.transpose() * &self.p * u)[(0, 0)] + self.q.dot(u) + self.c
    }

    /// Rows followed by the box written as rows.
    pub fn all_rows(&self) -> Vec<Row> {
        let n = self.dim();
        let mut rows = self.rows.clone();
        for i in 0..n {
            let mut e = Vector::zeros(n);
            e[i] = 1.0;
            rows.push((e.clone(), self.hi[i]));
            rows.push((-e, -self.lo[i]));
        }
        rows
    }

    pub fn max_violation(&self, u: &Vector) -> f64 {
        self.all_rows()
            .iter()
            .map(|(a, b)| a.dot(u) - b)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn row_tol((a, b): &Row) -> f64 {
    FEAS_TOL * (1.0 + a.amax() + b.abs())
}

fn subsets(m: usize, max_k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_k {
        let mut next = Vec::new();
        for s in &frontier {
            let start = s.last().map_or(0, |l: &usize| l + 1);
            for i in start..m {
                let mut t = s.clone();
                t.push(i);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Exact minimizer by active-set enumeration. Every subset of at most dim(u)
/// constraints is made active, the equality-constrained problem solved from
/// its KKT system, and the feasible candidate of least cost kept.
pub fn solve_qp(qp: &QPProblem) -> Option<Vector> {
    let n = qp.dim();
    let rows = qp.all_rows();
    let mut best: Option<(f64, Vector)> = None;
    for s in subsets(rows.len(), n) {
        let k = s.len();
        let mut m = DMatrix::zeros(n + k, n + k);
        let mut rhs = Vector::zeros(n + k);
        m.view_mut((0, 0), (n, n)).copy_from(&(&qp.p * 2.0));
        for i in 0..n {
            rhs[i] = -qp.q[i];
        }
        for (r, &idx) in s.iter().enumerate() {
            let (a, b) = &rows[idx];
            for i in 0..n {
                m[(n + r, i)] = a[i];
                m[(i, n + r)] = a[i];
            }
            rhs[n + r] = *b;
        }
        let Some(sol) = m.lu().solve(&rhs) else { continue };
        let u = Vector::from_iterator(n, sol.iter().take(n).copied());
        if !u.iter().all(|v| v.is_finite()) {
            continue;
        }
        if rows.iter().all(|r| r.0.dot(&u) - r.1 <= row_tol(r)) {
            let cost = qp.cost(&u);
            if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                best = Some((cost, u));
            }
        }
    }
    best.map(|(_, u)| {
        Vector::from_fn(n, |i, _| u[i].clamp(qp.lo[i], qp.hi[i]))
    })
}

/// KKT residual at u: max of primal infeasibility and the stationarity error
/// |2Pu + q + Σ λ_i a_i| with λ >= 0 on active rows, λ recomputed by
/// nonnegative least squares over active subsets.
pub fn kkt_residual(qp: &QPProblem, u: &Vector) -> f64 {
    let n = qp.dim();
    let rows = qp.all_rows();
    let primal = rows
        .iter()
        .map(|(a, b)| a.dot(u) - b)
        .fold(0.0f64, f64::max);
    let grad = &qp.p * u * 2.0 + &qp.q;
    let active: Vec<&Row> = rows
        .iter()
        .filter(|r| (r.0.dot(u) - r.1).abs() <= 1e-7 * (1.0 + r.1.abs()))
        .collect();
    let mut stat = grad.norm();
    for s in subsets(active.len(), n) {
        if s.is_empty() {
            continue;
        }
        let a = DMatrix::from_fn(n, s.len(), |i, c| active[s[c]].0[i]);
        let Ok(lambda) = a.clone().svd(true, true).solve(&(-&grad), 1e-14) else { continue };
        if lambda.iter().any(|l| *l < -1e-12) {
            continue;
        }
        let r = (&grad + &a * lambda).norm();
        stat = stat.min(r);
    }
    primal.max(stat)
}

/// min c·u over lo <= u <= hi and the rows, by vertex enumeration.
pub fn minimize_linear(c: &Vector, rows: &[Row], lo: &Vector, hi: &Vector) -> Option<(Vector, f64)> {
    let n = c.len();
    let qp = QPProblem {
        p: DMatrix::zeros(n, n),
        q: c.clone(),
        c: 0.0,
        rows: rows.to_vec(),
        lo: lo.clone(),
        hi: hi.clone(),
    };
    let all = qp.all_rows();
    let mut best: Option<(Vector, f64)> = None;
    for s in subsets(all.len(), n).into_iter().filter(|s| s.len() == n) {
        let a = DMatrix::from_fn(n, n, |r, i| all[s[r]].0[i]);
        let b = Vector::from_iterator(n, s.iter().map(|&k| all[k].1));
        let Some(u) = a.lu().solve(&b) else { continue };
        if all.iter().all(|r| r.0.dot(&u) - r.1 <= row_tol(r)) {
            let v = c.dot(&u);
            if best.as_ref().is_none_or(|(_, bv)| v < *bv) {
                best = Some((u, v));
            }
        }
    }
    best
}

/// The two rows L_fV + L_gV·u + V <= −ς and L_fB + L_gB·u >= ς.
pub fn admissible_constraints(
    x: &Vector,
    v: &ScalarField,
    b: &ScalarField,
    plant: &ControlledPlant,
    sigma: f64,
) -> Vec<Row> {
    admissible_constraints_with(x, v, b, plant, sigma, sigma)
}

/// As [`admissible_constraints`] with separate margins for the two rows.
pub fn admissible_constraints_with(
    x: &Vector,
    v: &ScalarField,
    b: &ScalarField,
    plant: &ControlledPlant,
    margin_v: f64,
    margin_b: f64,
) -> Vec<Row> {
    let (lfv, lgv) = plant.lie(v, x);
    let (lfb, lgb) = plant.lie(b, x);
    vec![
        (lgv, -margin_v - lfv - v.eval(x)),
        (-lgb, lfb - margin_b),
    ]
}

/// Quadratic cost (P, q, c) evaluated at the decision state.
pub type CostFn = Arc<dyn Fn(&Vector) -> (DMatrix<f64>, Vector, f64) + Send + Sync>;

#[derive(Clone)]
pub struct QpPolicy {
    pub plant: ControlledPlant,
    pub v: ScalarField,
    pub b: ScalarField,
    pub cost: CostFn,
    pub cfg: SampleHoldConfig,
    pub margin_v: f64,
    pub margin_b: f64,
}

impl fmt::Debug for QpPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QpPolicy")
            .field("plant", &self.plant)
            .field("cfg", &self.cfg)
            .field("margin_v", &self.margin_v)
            .field("margin_b", &self.margin_b)
            .finish_non_exhaustive()
    }
}

/// Ladder levels: 0 nominal; 1..=8 positive margins halved that many times;
/// 9 least-violation V-row; 10 hold.
pub const LEVEL_LEAST_VIOLATION: u8 = 9;
pub const LEVEL_HOLD: u8 = 10;
const RELAX_STEPS: u8 = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub u: Vec<f64>,
    pub level: u8,
    /// Residual a·u − b of the nominal V-row; <= 0 when it holds.
    pub row_v: f64,
    /// Residual of the nominal B-row.
    pub row_b: f64,
    pub cost: f64,
}

impl Decision {
    pub fn plain(u: &Vector) -> Self {
        Self {
            u: u.iter().copied().collect(),
            level: 0,
            row_v: 0.0,
            row_b: 0.0,
            cost: 0.0,
        }
    }

    pub fn input(&self) -> Vector {
        Vector::from_column_slice(&self.u)
    }
}

/// Input box narrowed by the rate limits over one hold interval.
pub fn rate_box(input_box: &AxisBox, rate_limits: &[Option<f64>], u_prev: &Vector, dt: f64) -> AxisBox {
    let mut lo = input_box.lo.clone();
    let mut hi = input_box.hi.clone();
    for (i, r) in rate_limits.iter().enumerate().take(lo.len()) {
        if let Some(r) = r {
            lo[i] = lo[i].max(u_prev[i] - r * dt);
            hi[i] = hi[i].min(u_prev[i] + r * dt);
            if lo[i] > hi[i] {
                let p = u_prev[i].clamp(input_box.lo[i], input_box.hi[i]);
                lo[i] = p;
                hi[i] = p;
            }
        }
    }
    AxisBox { lo, hi }
}

impl QpPolicy {
    fn hold(&self, u_prev: &Vector, bx: &AxisBox) -> Vector {
        Vector::from_fn(u_prev.len(), |i, _| {
            let limited = self.cfg.rate_limits.get(i).copied().flatten().is_some();
            let v = if limited { u_prev[i] } else { 0.0 };
            v.clamp(bx.lo[i], bx.hi[i])
        })
    }

    /// One decision at state x with the previous input u_prev.
    pub fn decide(&self, x: &Vector, u_prev: &Vector, dt: f64) -> Decision {
        let bx = rate_box(&self.plant.input_box, &self.cfg.rate_limits, u_prev, dt);
        let (p, q, c) = (self.cost)(x);
        let nominal = admissible_constraints_with(x, &self.v, &self.b, &self.plant, self.margin_v, self.margin_b);
        let residual = |u: &Vector, k: usize| nominal[k].0.dot(u) - nominal[k].1;
        let make = |rows: Vec<Row>| QPProblem {
            p: p.clone(),
            q: q.clone(),
            c,
            rows,
            lo: bx.lo.clone(),
            hi: bx.hi.clone(),
        };
        let finish = |u: Vector, level: u8, qp: &QPProblem| Decision {
            row_v: residual(&u, 0),
            row_b: residual(&u, 1),
            cost: qp.cost(&u),
            u: u.iter().copied().collect(),
            level,
        };
        let relax = |m: f64, k: u8| if m > 0.0 { m / f64::powi(2.0, k as i32) } else { m };
        for level in 0..=RELAX_STEPS {
            let rows = admissible_constraints_with(
                x,
                &self.v,
                &self.b,
                &self.plant,
                relax(self.margin_v, level),
                relax(self.margin_b, level),
            );
            let qp = make(rows);
            if let Some(u) = solve_qp(&qp) {
                return finish(u, level, &qp);
            }
        }
        let rows = admissible_constraints_with(
            x,
            &self.v,
            &self.b,
            &self.plant,
            relax(self.margin_v, RELAX_STEPS),
            relax(self.margin_b, RELAX_STEPS),
        );
        let (v_row, b_row) = (rows[0].clone(), rows[1].clone());
        if let Some((u_lp, best)) = minimize_linear(&v_row.0, std::slice::from_ref(&b_row), &bx.lo, &bx.hi) {
            let slack = 1e-12 * (1.0 + best.abs());
            let qp = make(vec![(v_row.0.clone(), best + slack), b_row]);
            let u = solve_qp(&qp).unwrap_or(u_lp);
            return finish(u, LEVEL_LEAST_VIOLATION, &qp);
        }
        let qp = make(Vec::new());
        finish(self.hold(u_prev, &bx), LEVEL_HOLD, &qp)
    }
}

/// Feedback law on (x, u_prev).
pub type Policy = Arc<dyn Fn(&Vector, &Vector) -> Decision + Send + Sync>;

pub fn qp_policy(policy: QpPolicy) -> Policy {
    let dt = policy.cfg.period;
    Arc::new(move |x: &Vector, u_prev: &Vector| policy.decide(x, u_prev, dt))
}

/// Lift the plant to z = (x, u, τ): flow (f(x,u), 0, 1) on τ ∈ [0, period],
/// jump (x, κ(x, u), 0) on τ = period.
pub fn augment_sample_hold(
    plant: &ControlledPlant,
    policy: Policy,
    cfg: &SampleHoldConfig,
) -> Result<HybridSystem> {
    if !(cfg.period > 0.0) {
        return Err(Error::InvalidArgument("period must be positive".into()));
    }
    let (nx, nu) = (plant.dim_x, plant.dim_u);
    let dim = nx + nu + 1;
    let period = cfg.period;
    let mut lo: Vec<f64> = plant.state_box.lo.iter().copied().collect();
    let mut hi: Vec<f64> = plant.state_box.hi.iter().copied().collect();
    lo.extend(plant.input_box.lo.iter());
    hi.extend(plant.input_box.hi.iter());
    let (mut c_lo, mut c_hi) = (vec![f64::NEG_INFINITY; dim], vec![f64::INFINITY; dim]);
    let (mut d_lo, mut d_hi) = (c_lo.clone(), c_hi.clone());
    c_lo[dim - 1] = 0.0;
    c_hi[dim - 1] = period;
    d_lo[dim - 1] = period;
    d_hi[dim - 1] = period;
    lo.push(0.0);
    hi.push(period * 1.5);
    let p = plant.clone();
    let flow: VectorField = Arc::new(move |z: &Vector| {
        let x = z.rows(0, nx).into_owned();
        let u = z.rows(nx, nu).into_owned();
        let dx = p.vector_field(&x, &u);
        let mut out = Vector::zeros(dim);
        out.rows_mut(0, nx).copy_from(&dx);
        out[dim - 1] = 1.0;
        out
    });
    let jump = Arc::new(move |z: &Vector| {
        let x = z.rows(0, nx).into_owned();
        let u_prev = z.rows(nx, nu).into_owned();
        let d = policy(&x, &u_prev);
        let mut out = z.clone();
        for i in 0..nu {
            out[nx + i] = d.u[i];
        }
        out[dim - 1] = 0.0;
        vec![out]
    });
    make_system(
        dim,
        SetRegion::boxed(&c_lo, &c_hi)?,
        flow,
        SetRegion::boxed(&d_lo, &d_hi)?,
        jump,
        AxisBox::from_slices(&lo, &hi)?,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub index: usize,
    pub t: f64,
    pub x: Vec<f64>,
    pub decision: Decision,
}

#[derive(Clone, Debug)]
pub struct ClosedLoopRun {
    pub report: SolveReport,
    pub decisions: Vec<DecisionRecord>,
}

impl ClosedLoopRun {
    pub fn arc(&self) -> &HybridArc {
        &self.report.arc
    }

    /// Decision log as CSV: index, t, x.., u.., row margins, level.
    pub fn decisions_csv(&self) -> String {
        let nx = self.decisions.first().map_or(0, |d| d.x.len());
        let nu = self.decisions.first().map_or(0, |d| d.decision.u.len());
        let mut s = String::from("index,t");
        for i in 0..nx {
            s += &format!(",x{}", i + 1);
        }
        for i in 0..nu {
            s += &format!(",u{}", i + 1);
        }
        s += ",row_v,row_b,cost,level\n";
        for r in &self.decisions {
            s += &format!("{},{}", r.index, r.t);
            for v in r.x.iter().chain(r.decision.u.iter()) {
                s += &format!(",{v}");
            }
            s += &format!(
                ",{},{},{},{}\n",
                r.decision.row_v, r.decision.row_b, r.decision.cost, r.decision.level
            );
        }
        s
    }
}

/// Runs the lifted system from x0 with input u0 and τ = period, so the first
/// decision happens at t = 0. The log is rebuilt from the pre-jump states.
pub fn run_closed_loop(
    plant: &ControlledPlant,
    policy: Policy,
    cfg: &SampleHoldConfig,
    x0: &Vector,
    u0: &Vector,
    sim: &SimConfig,
) -> Result<ClosedLoopRun> {
    let sys = augment_sample_hold(plant, policy.clone(), cfg)?;
    let (nx, nu) = (plant.dim_x, plant.dim_u);
    let mut z0 = Vector::zeros(nx + nu + 1);
    z0.rows_mut(0, nx).copy_from(x0);
    z0.rows_mut(nx, nu).copy_from(u0);
    z0[nx + nu] = cfg.period;
    let report = solve(&sys, &z0, sim)?;
    let mut decisions = Vec::new();
    let phases = &report.arc.phases;
    for (j, ph) in phases.iter().enumerate().take(phases.len().saturating_sub(1)) {
        let z = ph.last();
        let x = z.rows(0, nx).into_owned();
        let u_prev = z.rows(nx, nu).into_owned();
        decisions.push(DecisionRecord {
            index: j,
            t: ph.t_end(),
            x: x.iter().copied().collect(),
            decision: policy(&x, &u_prev),
        });
    }
    Ok(ClosedLoopRun { report, decisions })
}
