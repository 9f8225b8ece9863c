//! Hybrid time domains, hybrid arcs, and systems H = (C, F, D, G) with their
//! δ-perturbations.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{inflate, AxisBox, SetRegion, Vector, DEFAULT_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridTime {
    pub t: f64,
    pub j: usize,
}

impl HybridTime {
    pub fn new(t: f64, j: usize) -> Self {
        Self { t, j }
    }

    /// Componentwise order on hybrid times.
    pub fn precedes(&self, other: &HybridTime) -> bool {
        self.t <= other.t && self.j <= other.j
    }
}

pub fn total_time(ht: HybridTime) -> f64 {
    ht.t + ht.j as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridTimeDomain {
    /// `[t_j, t_{j+1}]` for each jump index j.
    pub intervals: Vec<(f64, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    HorizonReached,
    LeftFlowAndJumpSets,
    EscapedBounds,
    ZenoAccumulation,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Termination::HorizonReached => "HorizonReached",
            Termination::LeftFlowAndJumpSets => "LeftFlowAndJumpSets",
            Termination::EscapedBounds => "EscapedBounds",
            Termination::ZenoAccumulation => "ZenoAccumulation",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Termination {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "HorizonReached" => Ok(Termination::HorizonReached),
            "LeftFlowAndJumpSets" => Ok(Termination::LeftFlowAndJumpSets),
            "EscapedBounds" => Ok(Termination::EscapedBounds),
            "ZenoAccumulation" => Ok(Termination::ZenoAccumulation),
            other => Err(Error::Parse(format!("unknown termination {other}"))),
        }
    }
}

/// Samples of one flow interval I^j.
#[derive(Clone, Debug, PartialEq)]
pub struct Phase {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
}

impl Phase {
    pub fn start(t: f64, x: Vector) -> Self {
        Self {
            times: vec![t],
            states: vec![x],
        }
    }

    pub fn push(&mut self, t: f64, x: Vector) {
        self.times.push(t);
        self.states.push(x);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("phase has samples")
    }

    pub fn first(&self) -> &Vector {
        &self.states[0]
    }

    pub fn last(&self) -> &Vector {
        self.states.last().expect("phase has samples")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridArc {
    pub phases: Vec<Phase>,
    pub termination: Termination,
    /// Jump indices j whose transition (j -> j+1) is a Zeno reset rather than
    /// an application of G.
    pub snapped_jumps: Vec<usize>,
}

/// One stored sample of an arc.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub j: usize,
    pub t: f64,
    pub x: &'a Vector,
}

impl Sample<'_> {
    pub fn total_time(&self) -> f64 {
        self.t + self.j as f64
    }
}

impl HybridArc {
    pub fn dim(&self) -> usize {
        self.phases[0].states[0].len()
    }

    pub fn domain(&self) -> HybridTimeDomain {
        HybridTimeDomain {
            intervals: self
                .phases
                .iter()
                .map(|p| (p.t_start(), p.t_end()))
                .collect(),
        }
    }

    pub fn jump_count(&self) -> usize {
        self.phases.len() - 1
    }

    pub fn initial(&self) -> &Vector {
        self.phases[0].first()
    }

    pub fn final_state(&self) -> &Vector {
        self.phases.last().expect("arc has phases").last()
    }

    pub fn end_time(&self) -> HybridTime {
        HybridTime::new(
            self.phases.last().expect("arc has phases").t_end(),
            self.jump_count(),
        )
    }

    pub fn flow_time(&self) -> f64 {
        self.end_time().t
    }

    pub fn samples(&self) -> impl Iterator<Item = Sample<'_>> + '_ {
        self.phases.iter().enumerate().flat_map(|(j, p)| {
            p.times
                .iter()
                .zip(p.states.iter())
                .map(move |(&t, x)| Sample { j, t, x })
        })
    }

    pub fn sample_count(&self) -> usize {
        self.phases.iter().map(Phase::len).sum()
    }

    /// Structural check: alignment of phases, ordering, dimension constancy.
    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::InvalidArc("no phases".into()));
        }
        let dim = self.phases[0]
            .states
            .first()
            .map(|x| x.len())
            .ok_or_else(|| Error::InvalidArc("empty first phase".into()))?;
        if self.phases[0].t_start() != 0.0 {
            return Err(Error::InvalidArc("domain does not start at t = 0".into()));
        }
        for (j, p) in self.phases.iter().enumerate() {
            if p.is_empty() || p.times.len() != p.states.len() {
                return Err(Error::InvalidArc(format!("phase {j} malformed")));
            }
            if p.times.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidArc(format!(
                    "phase {j} times not strictly increasing"
                )));
            }
            if let Some(x) = p.states.iter().find(|x| x.len() != dim) {
                return Err(Error::DimensionMismatch {
                    what: format!("arc phase {j}"),
                    expected: dim,
                    found: x.len(),
                });
            }
            if j > 0 && p.t_start() != self.phases[j - 1].t_end() {
                return Err(Error::InvalidArc(format!(
                    "phase {j} starts at {} but phase {} ends at {}",
                    p.t_start(),
                    j - 1,
                    self.phases[j - 1].t_end()
                )));
            }
        }
        if self.snapped_jumps.iter().any(|&j| j + 1 >= self.phases.len()) {
            return Err(Error::InvalidArc("snap index beyond last jump".into()));
        }
        Ok(())
    }

    /// Linear interpolation inside phase j.
    pub fn eval(&self, t: f64, j: usize) -> Result<Vector> {
        let p = self.phases.get(j).ok_or(Error::OutOfDomain { t, j })?;
        if t < p.t_start() || t > p.t_end() || t.is_nan() {
            return Err(Error::OutOfDomain { t, j });
        }
        let k = p.times.partition_point(|&s| s <= t);
        if k == 0 {
            return Ok(p.states[0].clone());
        }
        let i = k - 1;
        if p.times[i] == t || i + 1 == p.len() {
            return Ok(p.states[i].clone());
        }
        let (t0, t1) = (p.times[i], p.times[i + 1]);
        let w = (t - t0) / (t1 - t0);
        Ok(&p.states[i] * (1.0 - w) + &p.states[i + 1] * w)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("j,t");
        for i in 0..self.dim() {
            out.push_str(&format!(",x{}", i + 1));
        }
        out.push('\n');
        for s in self.samples() {
            out.push_str(&format!("{},{:.17e}", s.j, s.t));
            for v in s.x.iter() {
                out.push_str(&format!(",{v:.17e}"));
            }
            out.push('\n');
        }
        let snaps: Vec<String> = self.snapped_jumps.iter().map(|j| j.to_string()).collect();
        out.push_str(&format!(
            "# termination={} snapped_jumps={}\n",
            self.termination,
            snaps.join(";")
        ));
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut phases: Vec<Phase> = Vec::new();
        let mut termination = None;
        let mut snapped_jumps = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("j,") {
                continue;
            }
            if let Some(footer) = line.strip_prefix('#') {
                for kv in footer.split_whitespace() {
                    if let Some(v) = kv.strip_prefix("termination=") {
                        termination = Some(v.parse()?);
                    } else if let Some(v) = kv.strip_prefix("snapped_jumps=") {
                        for s in v.split(';').filter(|s| !s.is_empty()) {
                            snapped_jumps.push(s.parse().map_err(|_| {
                                Error::Parse(format!("bad snap index {s}"))
                            })?);
                        }
                    }
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 3 {
                return Err(Error::Parse(format!("line {}: too few fields", ln + 1)));
            }
            let j: usize = fields[0]
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad jump index", ln + 1)))?;
            let nums: std::result::Result<Vec<f64>, _> =
                fields[1..].iter().map(|s| s.parse::<f64>()).collect();
            let nums = nums.map_err(|_| Error::Parse(format!("line {}: bad number", ln + 1)))?;
            let x = Vector::from_column_slice(&nums[1..]);
            if j == phases.len() {
                phases.push(Phase::start(nums[0], x));
            } else if j + 1 == phases.len() {
                phases[j].push(nums[0], x);
            } else {
                return Err(Error::Parse(format!("line {}: jump index out of order", ln + 1)));
            }
        }
        let arc = HybridArc {
            phases,
            termination: termination
                .ok_or_else(|| Error::Parse("missing termination footer".into()))?,
            snapped_jumps,
        };
        arc.validate()?;
        Ok(arc)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let record = ArcRecord {
            dim: self.dim(),
            domain: self.domain(),
            phases: self
                .phases
                .iter()
                .enumerate()
                .map(|(j, p)| PhaseRecord {
                    j,
                    t: p.times.clone(),
                    x: p.states.iter().map(|x| x.iter().copied().collect()).collect(),
                })
                .collect(),
            termination: self.termination,
            snapped_jumps: self.snapped_jumps.clone(),
        };
        serde_json::to_value(record).expect("arc record serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let record: ArcRecord =
            serde_json::from_value(value.clone()).map_err(|e| Error::Parse(e.to_string()))?;
        let arc = HybridArc {
            phases: record
                .phases
                .into_iter()
                .map(|p| Phase {
                    times: p.t,
                    states: p.x.iter().map(|x| Vector::from_column_slice(x)).collect(),
                })
                .collect(),
            termination: record.termination,
            snapped_jumps: record.snapped_jumps,
        };
        arc.validate()?;
        Ok(arc)
    }
}

#[derive(Serialize, Deserialize)]
struct PhaseRecord {
    j: usize,
    t: Vec<f64>,
    x: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ArcRecord {
    dim: usize,
    domain: HybridTimeDomain,
    phases: Vec<PhaseRecord>,
    termination: Termination,
    snapped_jumps: Vec<usize>,
}

pub fn arc_eval(arc: &HybridArc, t: f64, j: usize) -> Result<Vector> {
    arc.eval(t, j)
}

pub type VectorField = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
pub type JumpMap = Arc<dyn Fn(&Vector) -> Vec<Vector> + Send + Sync>;
pub type Signal = Arc<dyn Fn(HybridTime) -> Vector + Send + Sync>;

#[derive(Clone)]
pub struct HybridSystem {
    pub dim: usize,
    pub flow_set: SetRegion,
    pub flow_map: VectorField,
    pub jump_set: SetRegion,
    pub jump_map: JumpMap,
    pub delta: f64,
    pub bounds: AxisBox,
    /// Applied instead of G when inter-jump gaps collapse (see `SimConfig::zeno_gap`).
    pub zeno_reset: Option<VectorField>,
    nominal: Option<(SetRegion, SetRegion)>,
}

impl fmt::Debug for HybridSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HybridSystem")
            .field("dim", &self.dim)
            .field("delta", &self.delta)
            .field("flow_set", &self.flow_set)
            .field("jump_set", &self.jump_set)
            .field("bounds", &self.bounds)
            .finish_non_exhaustive()
    }
}

impl HybridSystem {
    pub fn flow(&self, x: &Vector) -> Vector {
        (self.flow_map)(x)
    }

    pub fn jump(&self, x: &Vector) -> Vec<Vector> {
        (self.jump_map)(x)
    }

    pub fn with_zeno_reset(
        mut self,
        reset: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        self.zeno_reset = Some(Arc::new(reset));
        self
    }

    pub fn in_flow_set(&self, x: &Vector, tol: f64) -> bool {
        self.flow_set.contains(x, tol)
    }

    pub fn in_jump_set(&self, x: &Vector, tol: f64) -> bool {
        !self.jump_set.is_empty_union() && self.jump_set.contains(x, tol)
    }

    /// Flow and jump sets of the unperturbed system.
    pub fn nominal_sets(&self) -> (&SetRegion, &SetRegion) {
        match &self.nominal {
            Some((c, d)) => (c, d),
            None => (&self.flow_set, &self.jump_set),
        }
    }
}

fn check_dim(what: &str, expected: usize, found: Option<usize>) -> Result<()> {
    match found {
        Some(n) if n != expected => Err(Error::DimensionMismatch {
            what: what.into(),
            expected,
            found: n,
        }),
        _ => Ok(()),
    }
}

pub fn make_system(
    dim: usize,
    flow_set: SetRegion,
    flow_map: VectorField,
    jump_set: SetRegion,
    jump_map: JumpMap,
    bounds: AxisBox,
) -> Result<HybridSystem> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dim must be >= 1".into()));
    }
    check_dim("bounds", dim, Some(bounds.dim()))?;
    check_dim("flow set", dim, flow_set.dim())?;
    check_dim("jump set", dim, jump_set.dim())?;
    let probe = bounds.center();
    check_dim("flow map", dim, Some(flow_map(&probe).len()))?;

    if !jump_set.is_empty_union() {
        if let Some(region) = jump_set.sampling_box(&bounds).filter(AxisBox::is_finite) {
            let candidates = region.grid(&vec![5; dim])?;
            if let Some(p) = candidates
                .iter()
                .find(|p| jump_set.contains(p, DEFAULT_TOL))
            {
                let g = jump_map(p);
                if g.is_empty() {
                    return Err(Error::EmptyJumpMap);
                }
                for y in &g {
                    check_dim("jump map", dim, Some(y.len()))?;
                }
            }
        }
    }
    Ok(HybridSystem {
        dim,
        flow_set,
        flow_map,
        jump_set,
        jump_map,
        delta: 0.0,
        bounds,
        zeno_reset: None,
        nominal: None,
    })
}

/// H_δ: flow and jump sets inflated by δ. The δ-ball on F and G is realized by
/// the disturbance at solve time.
pub fn perturb(sys: &HybridSystem, delta: f64) -> HybridSystem {
    let delta = delta.max(0.0);
    let (c, d) = sys.nominal_sets();
    let (c, d) = (c.clone(), d.clone());
    let mut out = sys.clone();
    out.flow_set = inflate(&c, delta);
    out.jump_set = if d.is_empty_union() {
        d.clone()
    } else {
        inflate(&d, delta)
    };
    out.delta = delta;
    out.nominal = Some((c, d));
    out
}

#[derive(Clone, Default)]
pub enum Disturbance {
    #[default]
    None,
    RandomUniformBall { seed: u64 },
    Fixed(Signal),
}

impl fmt::Debug for Disturbance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Disturbance::None => f.write_str("None"),
            Disturbance::RandomUniformBall { seed } => {
                write!(f, "RandomUniformBall {{ seed: {seed} }}")
            }
            Disturbance::Fixed(_) => f.write_str("Fixed(..)"),
        }
    }
}

impl Disturbance {
    pub fn seed(&self) -> Option<u64> {
        match self {
            Disturbance::RandomUniformBall { seed } => Some(*seed),
            _ => None,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        match self {
            Disturbance::RandomUniformBall { .. } => Disturbance::RandomUniformBall { seed },
            other => other.clone(),
        }
    }
}
