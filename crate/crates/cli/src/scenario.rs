//! TOML scenario files and their resolution into core objects.

use std::collections::BTreeMap;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use lbras_core::control::augment_sample_hold;
use lbras_core::expr;
use lbras_core::{
    inflate, make_proper_indicator, make_system, mg_equilibrium, perturb, AxisBox,
    BouncingBallParams, CertificatePair, Disturbance, GridSpec, HybridSystem, InitialSet,
    MooreGreitzerParams, Priority, RASSpec, ScalarField, SetRegion, SimConfig, StabSafeSpec,
    Vector, DEFAULT_TOL,
};
use serde::{Deserialize, Serialize};

pub const EXAMPLES: [&str; 2] = ["bouncing-ball", "moore-greitzer"];

/// A set declared by variant name. Implicit sets are {x : expr(x) <= 0}
/// sampled inside [lo, hi].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SetDecl {
    Ball { center: Vec<f64>, radius: f64 },
    #[serde(rename = "box")]
    AxisBox { lo: Vec<f64>, hi: Vec<f64> },
    HalfSpaces { normals: Vec<Vec<f64>>, offsets: Vec<f64> },
    Whole { dim: usize },
    Empty,
    Implicit { expr: String, lo: Vec<f64>, hi: Vec<f64> },
    Union { parts: Vec<SetDecl> },
    Intersection { parts: Vec<SetDecl> },
    Complement { of: Box<SetDecl> },
    Inflate { of: Box<SetDecl>, r: f64 },
}

impl SetDecl {
    pub fn build(&self, vars: &[&str]) -> Result<SetRegion> {
        Ok(match self {
            SetDecl::Ball { center, radius } => {
                SetRegion::ball(Vector::from_column_slice(center), *radius)?
            }
            SetDecl::AxisBox { lo, hi } => SetRegion::boxed(lo, hi)?,
            SetDecl::HalfSpaces { normals, offsets } => {
                if normals.len() != offsets.len() {
                    bail!("half-spaces: {} normals but {} offsets", normals.len(), offsets.len());
                }
                SetRegion::HalfSpaces(
                    normals
                        .iter()
                        .zip(offsets)
                        .map(|(n, b)| (Vector::from_column_slice(n), *b))
                        .collect(),
                )
            }
            SetDecl::Whole { dim } => SetRegion::whole(*dim),
            SetDecl::Empty => SetRegion::empty(),
            SetDecl::Implicit { expr: src, lo, hi } => {
                let e = Arc::new(expr::parse(src, vars)?);
                let bbox = AxisBox::from_slices(lo, hi)?;
                SetRegion::implicit(
                    src.clone(),
                    move |x: &Vector| e.eval(x.as_slice()) <= 0.0,
                    None,
                    bbox,
                )
            }
            SetDecl::Union { parts } => {
                SetRegion::Union(parts.iter().map(|p| p.build(vars)).collect::<Result<_>>()?)
            }
            SetDecl::Intersection { parts } => SetRegion::Intersection(
                parts.iter().map(|p| p.build(vars)).collect::<Result<_>>()?,
            ),
            SetDecl::Complement { of } => of.build(vars)?.complement(),
            SetDecl::Inflate { of, r } => inflate(&of.build(vars)?, *r),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDecl {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example: Option<String>,
    /// Parameter overrides for the named example.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, toml::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inline: Option<InlineSystem>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSystem {
    pub vars: Vec<String>,
    pub flow: Vec<String>,
    pub flow_set: SetDecl,
    #[serde(default)]
    pub jump: Vec<String>,
    #[serde(default = "empty_set")]
    pub jump_set: SetDecl,
    pub bounds_lo: Vec<f64>,
    pub bounds_hi: Vec<f64>,
}

fn empty_set() -> SetDecl {
    SetDecl::Empty
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecDecl {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0_region: Option<SetDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unsafe_set: Option<SetDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<SetDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attractor: Option<SetDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settle_deadline: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_levels: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertDecl {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<String>,
    /// Open domain O of the certificates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<SetDecl>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimDecl {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_jumps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeno_gap: Option<f64>,
    /// "jump-first" or "flow-first".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckDecl {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attractor_exclusion: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinement_depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_init: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_dist: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invariance_set: Option<SetDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub falsify_region: Option<SetDecl>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub delta: f64,
    pub system: SystemDecl,
    #[serde(default)]
    pub spec: SpecDecl,
    #[serde(default)]
    pub certificates: CertDecl,
    #[serde(default)]
    pub sim: SimDecl,
    #[serde(default)]
    pub check: CheckDecl,
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

/// Applies `key=value` overrides. Dotted keys address scenario tables; bare
/// keys other than `seed` and `delta` address example parameters.
pub fn apply_overrides(doc: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (key, value) = o
            .split_once('=')
            .ok_or_else(|| anyhow!("override '{o}' is not key=value"))?;
        let key = key.trim();
        let mut path: Vec<&str> = key.split('.').collect();
        if path.len() == 1 && key != "seed" && key != "delta" {
            path = vec!["system", "params", key];
        }
        let (last, parents) = path.split_last().expect("non-empty path");
        let mut table = &mut *doc;
        for p in parents {
            table = table
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| anyhow!("override '{key}': '{p}' is not a table"))?;
        }
        table.insert(last.to_string(), parse_value(value.trim()));
    }
    Ok(())
}

impl Scenario {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).context("scenario is not valid TOML")?;
        apply_overrides(&mut doc, overrides)?;
        let sc: Scenario = doc.try_into().context("scenario does not match the schema")?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn example(name: &str, overrides: &[String]) -> Result<Self> {
        let mut doc = toml::Table::new();
        let mut system = toml::Table::new();
        system.insert("example".into(), toml::Value::String(name.into()));
        doc.insert("system".into(), toml::Value::Table(system));
        let sc: Scenario = {
            apply_overrides(&mut doc, overrides)?;
            doc.try_into().context("overrides do not match the schema")?
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.system.example, &self.system.inline) {
            (Some(_), Some(_)) | (None, None) => {
                bail!("system needs exactly one of `example` or `inline`")
            }
            (Some(name), None) if !EXAMPLES.contains(&name.as_str()) => {
                bail!("unknown example '{name}' (expected one of {})", EXAMPLES.join(", "))
            }
            (None, Some(_)) if !self.system.params.is_empty() => {
                bail!("system.params only applies to named examples")
            }
            _ => {}
        }
        if self.delta.is_nan() || self.delta < 0.0 {
            bail!("delta must be >= 0");
        }
        Ok(())
    }
}

/// Scenario resolved into core objects.
pub struct Resolved {
    pub sys: HybridSystem,
    pub sys_delta: HybridSystem,
    pub vars: Vec<String>,
    pub x0: Vector,
    pub cert: Option<CertificatePair>,
    pub ras: Option<RASSpec>,
    pub stab: Option<StabSafeSpec>,
    pub sim: SimConfig,
    pub grid: GridSpec,
    pub n_init: usize,
    pub n_dist: usize,
    pub budget: usize,
}

pub fn merge_params<T: Serialize + for<'de> Deserialize<'de>>(
    base: &T,
    params: &BTreeMap<String, toml::Value>,
) -> Result<T> {
    let mut v = serde_json::to_value(base)?;
    let obj = v.as_object_mut().expect("params serialize to an object");
    for (k, val) in params {
        if !obj.contains_key(k) {
            let known: Vec<&String> = obj.keys().collect();
            bail!("unknown example parameter '{k}' (known: {known:?})");
        }
        obj.insert(k.clone(), serde_json::to_value(val)?);
    }
    serde_json::from_value(v).context("invalid example parameter value")
}

/// Lifts a set on the first `n` coordinates to a cylinder in the full space.
fn lift_set(set: SetRegion, n: usize, bounds: &AxisBox) -> SetRegion {
    let proj = move |x: &Vector| x.rows(0, n).into_owned();
    let (s1, s2) = (set.clone(), set.clone());
    let label = format!("lifted {}", set.variant_name());
    let mut lo = bounds.lo.clone();
    let mut hi = bounds.hi.clone();
    if let Some(b) = set.bounding_box() {
        lo.rows_mut(0, n).copy_from(&b.lo);
        hi.rows_mut(0, n).copy_from(&b.hi);
    }
    let bbox = AxisBox::new(lo, hi).unwrap_or_else(|_| bounds.clone());
    SetRegion::implicit(
        label,
        move |x: &Vector| s1.contains(&proj(x), DEFAULT_TOL),
        Some(Arc::new(move |x: &Vector| {
            let p = x.rows(0, n).into_owned();
            match s2.dist(&p) {
                Ok(d) if d > 0.0 => d,
                _ => -s2.depth(&p).unwrap_or(0.0),
            }
        })),
        bbox,
    )
}

fn lift_field(f: ScalarField, n: usize, dim: usize) -> ScalarField {
    let (g, v) = (f.clone(), f.clone());
    ScalarField::new(f.name.clone(), move |x: &Vector| v.eval(&x.rows(0, n).into_owned()))
        .with_grad(move |x: &Vector| {
            let mut out = Vector::zeros(dim);
            out.rows_mut(0, n).copy_from(&g.gradient(&x.rows(0, n).into_owned()));
            out
        })
}

struct Base {
    sys: HybridSystem,
    vars: Vec<String>,
    x0: Option<Vector>,
    cert: Option<CertificatePair>,
    ras: Option<RASSpec>,
    stab: Option<StabSafeSpec>,
    grid_box: AxisBox,
    exclusion: f64,
    horizon: f64,
    step: Option<f64>,
    grid_n: usize,
}

fn base_example(name: &str, params: &BTreeMap<String, toml::Value>) -> Result<Base> {
    match name {
        "bouncing-ball" => {
            let p: BouncingBallParams = merge_params(&BouncingBallParams::default(), params)?;
            p.validate()?;
            Ok(Base {
                sys: p.system()?,
                vars: vec!["x".into(), "y".into(), "z".into()],
                x0: Some(Vector::from_column_slice(&p.x0)),
                cert: Some(p.certificates()),
                ras: Some(p.ras_spec()),
                stab: Some(p.stab_spec()),
                grid_box: p.operating_box(),
                exclusion: 0.05,
                horizon: 20.0,
                step: None,
                grid_n: 41,
            })
        }
        "moore-greitzer" => {
            let p: MooreGreitzerParams = merge_params(&MooreGreitzerParams::default(), params)?;
            let plant = p.plant()?;
            let cfg = p.sample_hold();
            let sys = augment_sample_hold(&plant, p.policy()?, &cfg)?;
            let dim = sys.dim;
            let lift = |x: &Vector| {
                let mut z = Vector::zeros(dim);
                z.rows_mut(0, 2).copy_from(x);
                z[2] = 0.0;
                z[3] = p.gamma0;
                z[4] = p.period;
                z
            };
            let x0 = lift(&mg_equilibrium(p.gamma0, &p)?);
            let base_cert = p.certificates();
            let mut cert = CertificatePair::new(
                lift_field(base_cert.v, 2, dim),
                lift_set(base_cert.region, 2, &sys.bounds),
            );
            cert.b = base_cert.b.map(|b| lift_field(b, 2, dim));
            let ras = p.ras_spec()?;
            let pts = match &ras.x0 {
                InitialSet::Points(pts) => pts.iter().map(lift).collect(),
                InitialSet::Region(_) => unreachable!("compressor x0 is a point list"),
            };
            let ras = RASSpec {
                x0: InitialSet::Points(pts),
                unsafe_set: lift_set(ras.unsafe_set, 2, &sys.bounds),
                target: lift_set(ras.target, 2, &sys.bounds),
                settle_deadline: ras.settle_deadline,
            };
            let mut grid_box = sys.bounds.clone();
            grid_box.hi[4] = p.period;
            Ok(Base {
                vars: ["phi", "psi", "v", "gamma", "tau"].map(String::from).to_vec(),
                x0: Some(x0),
                cert: Some(cert),
                ras: Some(ras),
                stab: None,
                grid_box,
                exclusion: 0.0,
                horizon: 100.0,
                step: Some(1e-2),
                grid_n: 5,
                sys,
            })
        }
        other => bail!("unknown example '{other}'"),
    }
}

fn base_inline(s: &InlineSystem) -> Result<Base> {
    let dim = s.vars.len();
    let vars: Vec<&str> = s.vars.iter().map(String::as_str).collect();
    if s.flow.len() != dim {
        bail!("inline system: {} flow components for {dim} variables", s.flow.len());
    }
    let flow = expr::vector_field(&s.flow, &vars)?;
    let jump_set = s.jump_set.build(&vars)?;
    let jump: lbras_core::hybrid::JumpMap = if s.jump.is_empty() {
        if !jump_set.is_empty_union() {
            bail!("inline system: jump set given without a jump map");
        }
        Arc::new(|x: &Vector| vec![x.clone()])
    } else {
        if s.jump.len() != dim {
            bail!("inline system: {} jump components for {dim} variables", s.jump.len());
        }
        let g = expr::vector_field(&s.jump, &vars)?;
        Arc::new(move |x: &Vector| vec![g(x)])
    };
    let bounds = AxisBox::from_slices(&s.bounds_lo, &s.bounds_hi)?;
    let sys = make_system(dim, s.flow_set.build(&vars)?, flow, jump_set, jump, bounds.clone())?;
    Ok(Base {
        sys,
        vars: s.vars.clone(),
        x0: None,
        cert: None,
        ras: None,
        stab: None,
        grid_box: bounds,
        exclusion: 0.0,
        horizon: SimConfig::default().horizon,
        step: None,
        grid_n: 21,
    })
}

impl Scenario {
    /// True when the given command mode draws random samples.
    pub fn needs_seed(&self, mode: &str) -> bool {
        match mode {
            "stability-safety" | "invariance" | "falsify" => true,
            "ras" => {
                self.delta > 0.0
                    || self.spec.x0_region.is_some()
                    || self.check.n_dist.unwrap_or(1) > 1
            }
            "simulate" => self.delta > 0.0,
            _ => false,
        }
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let mut base = match (&self.system.example, &self.system.inline) {
            (Some(name), None) => base_example(name, &self.system.params)?,
            (None, Some(s)) => base_inline(s)?,
            _ => bail!("system needs exactly one of `example` or `inline`"),
        };
        let vars: Vec<&str> = base.vars.iter().map(String::as_str).collect();
        let set = |d: &Option<SetDecl>| d.as_ref().map(|d| d.build(&vars)).transpose();
        let dim = base.sys.dim;

        if let Some(pts) = &self.spec.x0 {
            base.x0 = pts.first().map(|p| Vector::from_column_slice(p));
        }
        if let Some(x0) = &self.sim.x0 {
            base.x0 = Some(Vector::from_column_slice(x0));
        }
        let x0 = base
            .x0
            .clone()
            .ok_or_else(|| anyhow!("no initial state: set sim.x0 or spec.x0"))?;
        if x0.len() != dim {
            bail!("initial state has {} entries, system has dimension {dim}", x0.len());
        }

        let initial = match (&self.spec.x0, set(&self.spec.x0_region)?) {
            (_, Some(r)) => Some(InitialSet::Region(r)),
            (Some(pts), None) => Some(InitialSet::Points(
                pts.iter().map(|p| Vector::from_column_slice(p)).collect(),
            )),
            (None, None) => None,
        };

        let mut ras = base.ras.take();
        let (unsafe_set, target) = (set(&self.spec.unsafe_set)?, set(&self.spec.target)?);
        ras = match ras {
            Some(mut r) => {
                if let Some(i) = &initial {
                    r.x0 = i.clone();
                }
                if let Some(u) = &unsafe_set {
                    r.unsafe_set = u.clone();
                }
                if let Some(t) = &target {
                    r.target = t.clone();
                }
                if let Some(d) = self.spec.settle_deadline {
                    r.settle_deadline = d;
                }
                Some(r)
            }
            None => match (&initial, &unsafe_set, &target) {
                (Some(i), Some(u), Some(t)) => Some(RASSpec {
                    x0: i.clone(),
                    unsafe_set: u.clone(),
                    target: t.clone(),
                    settle_deadline: self.spec.settle_deadline.unwrap_or(f64::INFINITY),
                }),
                _ => None,
            },
        };

        let attractor = set(&self.spec.attractor)?;
        let stab = match base.stab.take() {
            Some(mut s) => {
                if let Some(i) = &initial {
                    s.x0 = i.clone();
                }
                if let Some(u) = &unsafe_set {
                    s.unsafe_set = u.clone();
                }
                if let Some(a) = &attractor {
                    s.attractor = a.clone();
                }
                if let Some(e) = &self.spec.eps_levels {
                    s.eps_levels = e.clone();
                }
                Some(s)
            }
            None => match (&initial, &unsafe_set, &attractor) {
                (Some(i), Some(u), Some(a)) => Some(StabSafeSpec {
                    x0: i.clone(),
                    unsafe_set: u.clone(),
                    attractor: a.clone(),
                    eps_levels: self.spec.eps_levels.clone().unwrap_or(vec![0.05, 0.1, 0.5]),
                }),
                _ => None,
            },
        };

        let mut cert = base.cert.take();
        if let Some(src) = &self.certificates.v {
            let domain = match (set(&self.certificates.domain)?, &cert) {
                (Some(d), _) => d,
                (None, Some(c)) => c.region.clone(),
                (None, None) => SetRegion::whole(dim),
            };
            cert = Some(CertificatePair::new(expr::scalar_field("V", src, &vars)?, domain));
        } else if let (Some(c), Some(d)) = (cert.as_mut(), set(&self.certificates.domain)?) {
            c.region = d;
        }
        if let Some(src) = &self.certificates.b {
            let c = cert
                .as_mut()
                .ok_or_else(|| anyhow!("certificates.b given without certificates.v"))?;
            c.b = Some(expr::scalar_field("B", src, &vars)?);
        }
        if let Some(c) = cert.as_mut() {
            let a = stab
                .as_ref()
                .map(|s| s.attractor.clone())
                .or_else(|| ras.as_ref().map(|r| r.target.clone()));
            if let Some(a) = a {
                c.omega = make_proper_indicator(&a, &c.region, DEFAULT_TOL).ok();
            }
        }

        let d = SimConfig::default();
        let priority = match self.sim.priority.as_deref() {
            None | Some("jump-first") => Priority::JumpFirst,
            Some("flow-first") => Priority::FlowFirst,
            Some(other) => bail!("unknown priority '{other}'"),
        };
        let mut sim = SimConfig {
            step: self.sim.step.or(base.step).unwrap_or(d.step),
            horizon: self.sim.horizon.unwrap_or(base.horizon),
            max_jumps: self.sim.max_jumps.unwrap_or(d.max_jumps),
            event_tol: self.sim.event_tol.unwrap_or(d.event_tol),
            priority,
            disturbance: Disturbance::None,
            zeno_gap: self.sim.zeno_gap.unwrap_or(d.zeno_gap),
        };
        if self.delta > 0.0 {
            sim.disturbance = Disturbance::RandomUniformBall {
                seed: self.seed.unwrap_or(0),
            };
        }

        let grid_box = match (&self.check.lo, &self.check.hi) {
            (Some(lo), Some(hi)) => AxisBox::from_slices(lo, hi)?,
            (None, None) => base.grid_box.clone(),
            _ => bail!("check.lo and check.hi go together"),
        };
        let counts = match &self.check.counts {
            Some(c) => c.clone(),
            None => vec![self.check.grid.unwrap_or(base.grid_n); dim],
        };
        let mut grid = GridSpec::new(grid_box, counts);
        grid.attractor_exclusion = self.check.attractor_exclusion.unwrap_or(base.exclusion);
        if let Some(r) = self.check.refinement_depth {
            grid.refinement_depth = r;
        }
        if let Some(t) = self.check.tol {
            grid.tol = t;
        }

        let sys_delta = perturb(&base.sys, self.delta);
        Ok(Resolved {
            sys: base.sys,
            sys_delta,
            vars: base.vars,
            x0,
            cert,
            ras,
            stab,
            sim,
            grid,
            n_init: self.check.n_init.unwrap_or(20),
            n_dist: self.check.n_dist.unwrap_or(1),
            budget: self.check.budget.unwrap_or(4000),
        })
    }

    /// Set used by `check --mode invariance`: check.invariance_set, else the
    /// spec target.
    pub fn invariance_set(&self, r: &Resolved) -> Result<SetRegion> {
        let vars: Vec<&str> = r.vars.iter().map(String::as_str).collect();
        match &self.check.invariance_set {
            Some(d) => d.build(&vars),
            None => r
                .ras
                .as_ref()
                .map(|s| s.target.clone())
                .ok_or_else(|| anyhow!("invariance check needs check.invariance_set or spec.target")),
        }
    }

    pub fn falsify_region(&self, r: &Resolved) -> Result<SetRegion> {
        let vars: Vec<&str> = r.vars.iter().map(String::as_str).collect();
        match &self.check.falsify_region {
            Some(d) => d.build(&vars),
            None => Ok(SetRegion::AxisBox(r.grid.bbox.clone())),
        }
    }
}
