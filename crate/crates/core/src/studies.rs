//! The two built-in case studies: a bouncing ball moving sideways at unit
//! speed, and a Moore-Greitzer compressor model under a sample-and-hold QP
//! controller.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::certificates::{CertificatePair, GridSpec, ScalarField};
use crate::control::{qp_policy, ControlledPlant, CostFn, Policy, QpPolicy, SampleHoldConfig};
use crate::error::{Error, Result};
use crate::geometry::{vector, AxisBox, SetRegion, SignedDistance, Vector, DEFAULT_TOL};
use crate::hybrid::{make_system, HybridSystem};
use crate::monitor::{InitialSet, RASSpec, StabSafeSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BouncingBallParams {
    pub a: f64,
    pub restitution: f64,
    pub x0: Vec<f64>,
    pub settle_deadline: f64,
}

impl Default for BouncingBallParams {
    fn default() -> Self {
        Self {
            a: 9.8,
            restitution: 0.8,
            x0: vec![0.0, 9.0, 0.8],
            settle_deadline: 100.0,
        }
    }
}

pub fn sigmoid5(x: f64) -> f64 {
    1.0 / (1.0 + (-5.0 * x).exp())
}

impl BouncingBallParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.restitution > 0.0 && self.restitution < 1.0) || !(self.a > 0.0) || self.x0.len() != 3 {
            return Err(Error::InvalidArgument(
                "bouncing ball needs a > 0, restitution in (0,1) and a 3-dim x0".into(),
            ));
        }
        Ok(())
    }

    pub fn jump(&self, x: &Vector) -> Vector {
        vector(&[x[0], 0.0, -self.restitution * x[2]])
    }

    pub fn energy(&self, x: &Vector) -> f64 {
        x[2] * x[2] / 2.0 + self.a * x[1]
    }

    /// Coefficient of the arctan tilt in V.
    pub fn tilt(&self) -> f64 {
        let s2 = self.restitution * self.restitution;
        (1.0 - s2) / (PI * (1.0 + s2))
    }

    pub fn lyapunov(&self) -> ScalarField {
        let (a, k) = (self.a, self.tilt());
        ScalarField::new("V", move |x: &Vector| {
            (1.0 + k * x[2].atan()) * (x[2] * x[2] / 2.0 + a * x[1])
        })
        .with_grad(move |x: &Vector| {
            let (y, z) = (x[1], x[2]);
            let tilt = 1.0 + k * z.atan();
            let e = z * z / 2.0 + a * y;
            vector(&[0.0, tilt * a, k / (1.0 + z * z) * e + tilt * z])
        })
    }

    pub fn barrier(&self) -> ScalarField {
        let a = self.a;
        ScalarField::new("B", move |x: &Vector| {
            0.5 * sigmoid5(x[0]) - x[1] - x[2] * x[2] / (2.0 * a) + 9.5
        })
        .with_grad(move |x: &Vector| {
            let s = sigmoid5(x[0]);
            vector(&[2.5 * s * (1.0 - s), -1.0, -x[2] / a])
        })
    }

    pub fn operating_box(&self) -> AxisBox {
        AxisBox::from_slices(&[-1.0, 0.0, -15.0], &[21.0, 11.0, 15.0]).expect("static box")
    }

    pub fn sim_bounds(&self) -> AxisBox {
        AxisBox::from_slices(&[-1.0, -1.0, -16.0], &[25.0, 12.0, 16.0]).expect("static box")
    }

    pub fn flow_set(&self) -> SetRegion {
        SetRegion::AxisBox(AxisBox {
            lo: vector(&[f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY]),
            hi: vector(&[f64::INFINITY; 3]),
        })
    }

    /// {y ≤ tol, z < 0}, with the distance to the closed quadrant {y ≤ 0, z ≤ 0}.
    pub fn jump_set(&self) -> SetRegion {
        let sd: SignedDistance = Arc::new(|x: &Vector| {
            let (y, z) = (x[1], x[2]);
            if y <= 0.0 && z <= 0.0 {
                -(-y).min(-z)
            } else {
                (y.max(0.0).powi(2) + z.max(0.0).powi(2)).sqrt()
            }
        });
        SetRegion::implicit(
            "impact",
            |x: &Vector| x[1] <= DEFAULT_TOL && x[2] < 0.0,
            Some(sd),
            AxisBox::from_slices(&[-1.0, -1.0, -16.0], &[25.0, 0.0, 0.0]).expect("static box"),
        )
    }

    /// {y > 10}; membership uses a strict comparison.
    pub fn unsafe_set(&self) -> SetRegion {
        SetRegion::implicit(
            "above-10",
            |x: &Vector| x[1] > 10.0 + DEFAULT_TOL,
            Some(Arc::new(|x: &Vector| 10.0 - x[1])),
            AxisBox::from_slices(&[-1.0, 10.0, -16.0], &[25.0, 12.0, 16.0]).expect("static box"),
        )
    }

    pub fn target(&self) -> SetRegion {
        SetRegion::AxisBox(AxisBox {
            lo: vector(&[f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY]),
            hi: vector(&[f64::INFINITY, 0.1, f64::INFINITY]),
        })
    }

    /// A = {y = 0, z = 0}.
    pub fn attractor(&self) -> SetRegion {
        SetRegion::AxisBox(AxisBox {
            lo: vector(&[f64::NEG_INFINITY, 0.0, 0.0]),
            hi: vector(&[f64::INFINITY, 0.0, 0.0]),
        })
    }

    /// Certificate domain O = {y < 10.5}.
    pub fn domain(&self) -> SetRegion {
        SetRegion::HalfSpaces(vec![(vector(&[0.0, 1.0, 0.0]), 10.5)])
    }

    pub fn system(&self) -> Result<HybridSystem> {
        self.validate()?;
        let a = self.a;
        let p = self.clone();
        let flow = Arc::new(move |x: &Vector| {
            // At rest on the ground the ball only slides.
            if x[1] <= DEFAULT_TOL && x[2].abs() <= DEFAULT_TOL {
                vector(&[1.0, 0.0, 0.0])
            } else {
                vector(&[1.0, x[2], -a])
            }
        });
        let jump = Arc::new(move |x: &Vector| vec![p.jump(x)]);
        Ok(make_system(3, self.flow_set(), flow, self.jump_set(), jump, self.sim_bounds())?
            .with_zeno_reset(|x: &Vector| vector(&[x[0], 0.0, 0.0])))
    }

    pub fn certificates(&self) -> CertificatePair {
        let mut c = CertificatePair::new(self.lyapunov(), self.domain());
        c.b = Some(self.barrier());
        c
    }

    pub fn ras_spec(&self) -> RASSpec {
        RASSpec {
            x0: InitialSet::Points(vec![Vector::from_column_slice(&self.x0)]),
            unsafe_set: self.unsafe_set(),
            target: self.target(),
            settle_deadline: self.settle_deadline,
        }
    }

    pub fn stab_spec(&self) -> StabSafeSpec {
        StabSafeSpec {
            x0: InitialSet::Points(vec![Vector::from_column_slice(&self.x0)]),
            unsafe_set: self.unsafe_set(),
            attractor: self.attractor(),
            eps_levels: vec![0.05, 0.1, 0.5],
        }
    }

    /// Grid on the operating box with a 0.05 exclusion around A.
    pub fn grid(&self, n: usize) -> GridSpec {
        let mut g = GridSpec::uniform(self.operating_box(), n);
        g.attractor_exclusion = 0.05;
        g
    }
}

pub fn bouncing_ball(params: &BouncingBallParams) -> Result<(HybridSystem, CertificatePair, RASSpec)> {
    Ok((params.system()?, params.certificates(), params.ras_spec()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MooreGreitzerParams {
    pub lc: f64,
    pub iota: f64,
    pub theta: f64,
    pub a_coef: f64,
    pub zeta: [f64; 2],
    pub r: f64,
    /// Center of the protected box U.
    pub u_center: [f64; 2],
    pub sigma: f64,
    pub gamma0: f64,
    pub period: f64,
    pub rate_limit: f64,
    pub v_max: f64,
    pub gamma_range: [f64; 2],
    pub state_lo: [f64; 2],
    pub state_hi: [f64; 2],
    pub settle_deadline: f64,
}

impl Default for MooreGreitzerParams {
    fn default() -> Self {
        let iota = 0.18;
        Self {
            lc: 8.0,
            iota,
            theta: 0.25,
            a_coef: 1.67 * iota,
            zeta: [0.4519, 0.6513],
            r: 0.003,
            u_center: [0.5, 0.653],
            sigma: 0.07,
            gamma0: 0.64,
            period: 0.5,
            rate_limit: 0.01,
            v_max: 0.05,
            gamma_range: [0.5, 1.0],
            state_lo: [0.2, 0.2],
            state_hi: [0.9, 1.2],
            settle_deadline: 100.0,
        }
    }
}

/// Cubic compressor characteristic ψ_c(Φ).
pub fn psi_c(phi: f64, p: &MooreGreitzerParams) -> f64 {
    let s = phi / p.theta - 1.0;
    p.a_coef + p.iota * (1.0 + 1.5 * s - 0.5 * s * s * s)
}

pub fn psi_c_prime(phi: f64, p: &MooreGreitzerParams) -> f64 {
    let s = phi / p.theta - 1.0;
    p.iota * (1.5 - 1.5 * s * s) / p.theta
}

impl MooreGreitzerParams {
    pub fn drift(&self, x: &Vector) -> Vector {
        vector(&[
            (psi_c(x[0], self) - x[1]) / self.lc,
            x[0] / (16.0 * self.lc),
        ])
    }

    /// (v, γ) ↦ (v, −γ√Ψ/(16 l_c)). NaN entries when Ψ < 0.
    pub fn input_matrix(&self, x: &Vector) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -x[1].sqrt() / (16.0 * self.lc)])
    }

    pub fn try_vector_field(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        if x[1] < 0.0 {
            return Err(Error::DomainViolation(format!("sqrt of negative Psi = {}", x[1])));
        }
        Ok(self.drift(x) + self.input_matrix(x) * u)
    }

    pub fn input_box(&self) -> AxisBox {
        AxisBox::from_slices(
            &[-self.v_max, self.gamma_range[0]],
            &[self.v_max, self.gamma_range[1]],
        )
        .expect("valid input box")
    }

    pub fn state_box(&self) -> AxisBox {
        AxisBox::from_slices(&self.state_lo, &self.state_hi).expect("valid state box")
    }

    pub fn plant(&self) -> Result<ControlledPlant> {
        let (p1, p2) = (self.clone(), self.clone());
        ControlledPlant::new(
            Arc::new(move |x: &Vector| p1.drift(x)),
            Arc::new(move |x: &Vector| p2.input_matrix(x)),
            self.input_box(),
            self.state_box(),
        )
    }

    pub fn lyapunov(&self) -> ScalarField {
        let z = vector(&self.zeta);
        let z2 = z.clone();
        ScalarField::new("V", move |x: &Vector| (x - &z).norm_squared())
            .with_grad(move |x: &Vector| (x - &z2) * 2.0)
    }

    /// h(x) = ‖x − c‖∞ − r.
    pub fn h(&self, x: &Vector) -> f64 {
        let d0 = (x[0] - self.u_center[0]).abs();
        let d1 = (x[1] - self.u_center[1]).abs();
        d0.max(d1) - self.r
    }

    /// B = −log(h/(1+h)); −∞ where h ≤ 0.
    pub fn barrier(&self) -> ScalarField {
        let (p1, p2) = (self.clone(), self.clone());
        ScalarField::new("B", move |x: &Vector| {
            let h = p1.h(x);
            if h <= 0.0 {
                f64::NEG_INFINITY
            } else {
                ((1.0 + h) / h).ln()
            }
        })
        .with_grad(move |x: &Vector| {
            let h = p2.h(x);
            let dx = [x[0] - p2.u_center[0], x[1] - p2.u_center[1]];
            let k = if dx[0].abs() >= dx[1].abs() { 0 } else { 1 };
            let dbdh = -1.0 / (h * (1.0 + h));
            let mut g = Vector::zeros(2);
            g[k] = dbdh * dx[k].signum();
            g
        })
    }

    pub fn try_barrier(&self, x: &Vector) -> Result<f64> {
        let h = self.h(x);
        if h <= 0.0 {
            return Err(Error::DomainViolation(format!("barrier undefined at h = {h}")));
        }
        Ok(((1.0 + h) / h).ln())
    }

    /// −B, the orientation used by the controller's barrier row.
    pub fn control_barrier(&self) -> ScalarField {
        let b = self.barrier();
        let (v, g) = (b.value.clone(), b.grad.clone().expect("analytic"));
        ScalarField::new("-B", move |x: &Vector| -v(x)).with_grad(move |x: &Vector| -g(x))
    }

    pub fn unsafe_set(&self) -> SetRegion {
        let c = self.u_center;
        SetRegion::boxed(&[c[0] - self.r, c[1] - self.r], &[c[0] + self.r, c[1] + self.r])
            .expect("valid box")
    }

    pub fn target(&self) -> SetRegion {
        SetRegion::Ball {
            center: vector(&self.zeta),
            radius: self.r,
        }
    }

    /// (P, q, c) of |u|² + (2v/l_c)(ψ_c − Ψ) + ((Φ − γ√Ψ)/(4 l_c))².
    pub fn cost(&self, x: &Vector) -> (DMatrix<f64>, Vector, f64) {
        let (phi, psi) = (x[0], x[1]);
        let l2 = 16.0 * self.lc * self.lc;
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0 + psi / l2]);
        let q = vector(&[
            2.0 * (psi_c(phi, self) - psi) / self.lc,
            -2.0 * phi * psi.sqrt() / l2,
        ]);
        (p, q, phi * phi / l2)
    }

    pub fn sample_hold(&self) -> SampleHoldConfig {
        SampleHoldConfig {
            period: self.period,
            sigma: self.sigma,
            rate_limits: vec![None, Some(self.rate_limit)],
        }
    }

    pub fn certificates(&self) -> CertificatePair {
        let mut c = CertificatePair::new(self.lyapunov(), SetRegion::AxisBox(self.state_box()));
        c.b = Some(self.barrier());
        c
    }

    /// Equilibria for γ on a grid over [0.62, 0.66].
    pub fn ras_spec(&self) -> Result<RASSpec> {
        let pts = (0..=4)
            .map(|k| mg_equilibrium(0.62 + 0.01 * k as f64, self))
            .collect::<Result<Vec<_>>>()?;
        Ok(RASSpec {
            x0: InitialSet::Points(pts),
            unsafe_set: self.unsafe_set(),
            target: self.target(),
            settle_deadline: self.settle_deadline,
        })
    }

    pub fn policy_spec(&self) -> Result<QpPolicy> {
        let p = self.clone();
        let cost: CostFn = Arc::new(move |x: &Vector| p.cost(x));
        Ok(QpPolicy {
            plant: self.plant()?,
            v: self.lyapunov(),
            b: self.control_barrier(),
            cost,
            cfg: self.sample_hold(),
            margin_v: self.sigma,
            margin_b: -self.sigma,
        })
    }

    pub fn policy(&self) -> Result<Policy> {
        Ok(qp_policy(self.policy_spec()?))
    }
}

pub fn moore_greitzer(
    params: &MooreGreitzerParams,
) -> Result<(ControlledPlant, CertificatePair, RASSpec, SampleHoldConfig)> {
    Ok((
        params.plant()?,
        params.certificates(),
        params.ras_spec()?,
        params.sample_hold(),
    ))
}

/// Equilibrium of the uncontrolled flow with v = 0 and throttle γ: solves
/// ψ_c(Φ) = Ψ and Φ = γ√Ψ by damped Newton from (Θ, ψ_c(Θ)).
pub fn mg_equilibrium(gamma: f64, p: &MooreGreitzerParams) -> Result<Vector> {
    let residual = |phi: f64, psi: f64| -> (f64, f64) {
        (psi_c(phi, p) - psi, phi - gamma * psi.max(0.0).sqrt())
    };
    let (mut phi, mut psi) = (p.theta, psi_c(p.theta, p));
    let mut r = residual(phi, psi);
    let norm = |r: (f64, f64)| r.0.abs().max(r.1.abs());
    for _ in 0..100 {
        if norm(r) <= 1e-12 {
            return Ok(vector(&[phi, psi]));
        }
        let j = [
            [psi_c_prime(phi, p), -1.0],
            [1.0, -gamma / (2.0 * psi.sqrt())],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let dphi = -(j[1][1] * r.0 - j[0][1] * r.1) / det;
        let dpsi = -(-j[1][0] * r.0 + j[0][0] * r.1) / det;
        let mut lambda = 1.0;
        loop {
            let (np, ns) = (phi + lambda * dphi, psi + lambda * dpsi);
            if ns > 0.0 {
                let nr = residual(np, ns);
                if norm(nr) < norm(r) || lambda < 1e-6 {
                    phi = np;
                    psi = ns;
                    r = nr;
                    break;
                }
            }
            lambda /= 2.0;
            if lambda < 1e-12 {
                break;
            }
        }
    }
    if norm(r) <= 1e-12 {
        return Ok(vector(&[phi, psi]));
    }
    Err(Error::NoConvergence {
        iterations: 100,
        residual: norm(r),
    })
}
