//! Set primitives: membership, point-to-set distance, inflation, set algebra and
//! proper indicators.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;

/// Absolute membership tolerance used when callers do not pass one.
pub const DEFAULT_TOL: f64 = 1e-9;

pub type Predicate = Arc<dyn Fn(&Vector) -> bool + Send + Sync>;
pub type SignedDistance = Arc<dyn Fn(&Vector) -> f64 + Send + Sync>;

pub fn vector(coords: &[f64]) -> Vector {
    DVector::from_column_slice(coords)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AxisBox {
    pub lo: Vector,
    pub hi: Vector,
}

impl AxisBox {
    pub fn new(lo: Vector, hi: Vector) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                what: "axis box bounds".into(),
                expected: lo.len(),
                found: hi.len(),
            });
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| !(l <= h)) {
            return Err(Error::InvalidArgument("axis box needs lo <= hi".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn from_slices(lo: &[f64], hi: &[f64]) -> Result<Self> {
        Self::new(vector(lo), vector(hi))
    }

    /// The whole space R^dim.
    pub fn whole(dim: usize) -> Self {
        Self {
            lo: Vector::from_element(dim, f64::NEG_INFINITY),
            hi: Vector::from_element(dim, f64::INFINITY),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn is_finite(&self) -> bool {
        self.lo.iter().chain(self.hi.iter()).all(|v| v.is_finite())
    }

    pub fn center(&self) -> Vector {
        Vector::from_fn(self.dim(), |i, _| {
            let (l, h) = (self.lo[i], self.hi[i]);
            match (l.is_finite(), h.is_finite()) {
                (true, true) => 0.5 * (l + h),
                (true, false) => l,
                (false, true) => h,
                (false, false) => 0.0,
            }
        })
    }

    pub fn widths(&self) -> Vector {
        &self.hi - &self.lo
    }

    fn excess(&self, x: &Vector) -> Vector {
        Vector::from_fn(self.dim(), |i, _| {
            (self.lo[i] - x[i]).max(x[i] - self.hi[i]).max(0.0)
        })
    }

    pub fn dist(&self, x: &Vector) -> f64 {
        self.excess(x).norm()
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        self.dist(x) <= tol
    }

    /// Distance from an interior point to the complement (0 outside).
    pub fn depth(&self, x: &Vector) -> f64 {
        if !self.contains(x, 0.0) {
            return 0.0;
        }
        (0..self.dim())
            .map(|i| (x[i] - self.lo[i]).min(self.hi[i] - x[i]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn intersect(&self, other: &AxisBox) -> Option<AxisBox> {
        let lo = self.lo.zip_map(&other.lo, f64::max);
        let hi = self.hi.zip_map(&other.hi, f64::min);
        if lo.iter().zip(hi.iter()).all(|(l, h)| l <= h) {
            Some(AxisBox { lo, hi })
        } else {
            None
        }
    }

    pub fn hull(&self, other: &AxisBox) -> AxisBox {
        AxisBox {
            lo: self.lo.zip_map(&other.lo, f64::min),
            hi: self.hi.zip_map(&other.hi, f64::max),
        }
    }

    pub fn inflate(&self, r: f64) -> AxisBox {
        AxisBox {
            lo: self.lo.add_scalar(-r),
            hi: self.hi.add_scalar(r),
        }
    }

    pub fn clamp(&self, x: &Vector) -> Vector {
        Vector::from_fn(self.dim(), |i, _| x[i].clamp(self.lo[i], self.hi[i]))
    }

    fn require_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "sampling needs a finite bounding box".into(),
            ))
        }
    }

    /// Tensor grid with `counts[i]` nodes per axis, endpoints included.
    /// A degenerate axis or a count of 1 contributes the axis midpoint.
    pub fn grid(&self, counts: &[usize]) -> Result<Vec<Vector>> {
        self.require_finite()?;
        if counts.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "grid counts".into(),
                expected: self.dim(),
                found: counts.len(),
            });
        }
        let axes: Vec<Vec<f64>> = (0..self.dim())
            .map(|i| linspace(self.lo[i], self.hi[i], counts[i]))
            .collect();
        let total: usize = axes.iter().map(Vec::len).product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; self.dim()];
        for _ in 0..total {
            out.push(Vector::from_fn(self.dim(), |i, _| axes[i][idx[i]]));
            for (k, slot) in idx.iter_mut().enumerate() {
                *slot += 1;
                if *slot < axes[k].len() {
                    break;
                }
                *slot = 0;
            }
        }
        Ok(out)
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<Vector>> {
        self.require_finite()?;
        Ok((0..n)
            .map(|_| {
                Vector::from_fn(self.dim(), |i, _| {
                    self.lo[i] + rng.random::<f64>() * (self.hi[i] - self.lo[i])
                })
            })
            .collect())
    }

    pub fn latin_hypercube<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<Vector>> {
        self.require_finite()?;
        let dim = self.dim();
        let perms: Vec<Vec<usize>> = (0..dim)
            .map(|_| {
                let mut p: Vec<usize> = (0..n).collect();
                p.shuffle(rng);
                p
            })
            .collect();
        Ok((0..n)
            .map(|k| {
                Vector::from_fn(dim, |i, _| {
                    let cell = (perms[i][k] as f64 + rng.random::<f64>()) / n as f64;
                    self.lo[i] + cell * (self.hi[i] - self.lo[i])
                })
            })
            .collect())
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 || lo == hi {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|k| {
            if k == n - 1 {
                hi
            } else {
                lo + (hi - lo) * k as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// A set given by a membership predicate. The signed distance, when present,
/// is negative inside, positive outside and its positive part is the exact
/// distance to the set.
#[derive(Clone)]
pub struct ImplicitSet {
    pub label: String,
    pub predicate: Predicate,
    pub signed_distance: Option<SignedDistance>,
    pub bbox: AxisBox,
}

impl fmt::Debug for ImplicitSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImplicitSet")
            .field("label", &self.label)
            .field("has_distance", &self.signed_distance.is_some())
            .field("bbox", &self.bbox)
            .finish()
    }
}

#[derive(Clone, Debug)]
pub enum SetRegion {
    Ball { center: Vector, radius: f64 },
    AxisBox(AxisBox),
    /// Intersection of half-spaces `normal · x <= offset`.
    HalfSpaces(Vec<(Vector, f64)>),
    Implicit(ImplicitSet),
    Inflated(Box<SetRegion>, f64),
    Union(Vec<SetRegion>),
    Intersection(Vec<SetRegion>),
    Complement(Box<SetRegion>),
}

impl SetRegion {
    pub fn ball(center: Vector, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(Error::InvalidArgument("ball radius must be >= 0".into()));
        }
        Ok(SetRegion::Ball { center, radius })
    }

    pub fn point(center: Vector) -> Self {
        SetRegion::Ball {
            center,
            radius: 0.0,
        }
    }

    pub fn boxed(lo: &[f64], hi: &[f64]) -> Result<Self> {
        Ok(SetRegion::AxisBox(AxisBox::from_slices(lo, hi)?))
    }

    pub fn whole(dim: usize) -> Self {
        SetRegion::AxisBox(AxisBox::whole(dim))
    }

    pub fn empty() -> Self {
        SetRegion::Union(Vec::new())
    }

    pub fn implicit(
        label: impl Into<String>,
        predicate: impl Fn(&Vector) -> bool + Send + Sync + 'static,
        signed_distance: Option<SignedDistance>,
        bbox: AxisBox,
    ) -> Self {
        SetRegion::Implicit(ImplicitSet {
            label: label.into(),
            predicate: Arc::new(predicate),
            signed_distance,
            bbox,
        })
    }

    pub fn complement(self) -> Self {
        SetRegion::Complement(Box::new(self))
    }

    pub fn is_empty_union(&self) -> bool {
        matches!(self, SetRegion::Union(v) if v.is_empty())
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            SetRegion::Ball { .. } => "Ball",
            SetRegion::AxisBox(_) => "AxisBox",
            SetRegion::HalfSpaces(_) => "HalfSpaceIntersection",
            SetRegion::Implicit(_) => "Implicit",
            SetRegion::Inflated(..) => "Inflated",
            SetRegion::Union(_) => "Union",
            SetRegion::Intersection(_) => "Intersection",
            SetRegion::Complement(_) => "Complement",
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            SetRegion::Ball { center, .. } => Some(center.len()),
            SetRegion::AxisBox(b) => Some(b.dim()),
            SetRegion::HalfSpaces(h) => h.first().map(|(n, _)| n.len()),
            SetRegion::Implicit(s) => Some(s.bbox.dim()),
            SetRegion::Inflated(a, _) | SetRegion::Complement(a) => a.dim(),
            SetRegion::Union(v) | SetRegion::Intersection(v) => v.iter().find_map(|s| s.dim()),
        }
    }

    /// Distance from `x` to the set. Exact for balls, boxes, single half-spaces,
    /// implicit sets with an oracle, unions, and intersections of boxes; a lower
    /// bound for other intersections.
    pub fn dist(&self, x: &Vector) -> Result<f64> {
        match self {
            SetRegion::Ball { center, radius } => Ok(((x - center).norm() - radius).max(0.0)),
            SetRegion::AxisBox(b) => Ok(b.dist(x)),
            SetRegion::HalfSpaces(hs) => {
                let violated: Vec<&(Vector, f64)> =
                    hs.iter().filter(|(n, b)| n.dot(x) > *b).collect();
                match violated.len() {
                    0 => Ok(0.0),
                    1 if hs.len() == 1 => {
                        let (n, b) = violated[0];
                        Ok((n.dot(x) - b) / n.norm())
                    }
                    _ => Err(Error::UnsupportedDistance(self.variant_name().into())),
                }
            }
            SetRegion::Implicit(s) => match &s.signed_distance {
                Some(sd) => Ok(sd(x).max(0.0)),
                None if (s.predicate)(x) => Ok(0.0),
                None => Err(Error::UnsupportedDistance(format!("Implicit({})", s.label))),
            },
            SetRegion::Inflated(a, r) => Ok((a.dist(x)? - r).max(0.0)),
            SetRegion::Union(parts) => {
                let mut best = f64::INFINITY;
                for p in parts {
                    best = best.min(p.dist(x)?);
                }
                Ok(best)
            }
            SetRegion::Intersection(parts) => {
                if let Some(b) = self.as_box_intersection() {
                    return Ok(b.map_or(f64::INFINITY, |b| b.dist(x)));
                }
                let mut worst: f64 = 0.0;
                for p in parts {
                    worst = worst.max(p.dist(x)?);
                }
                Ok(worst)
            }
            SetRegion::Complement(a) => a.depth(x),
        }
    }

    /// Distance from `x` to the complement of the set (0 outside the set).
    pub fn depth(&self, x: &Vector) -> Result<f64> {
        match self {
            SetRegion::Ball { center, radius } => Ok((radius - (x - center).norm()).max(0.0)),
            SetRegion::AxisBox(b) => Ok(b.depth(x)),
            SetRegion::HalfSpaces(hs) => {
                if hs.iter().any(|(n, b)| n.dot(x) > *b) {
                    return Ok(0.0);
                }
                Ok(hs
                    .iter()
                    .map(|(n, b)| (b - n.dot(x)) / n.norm())
                    .fold(f64::INFINITY, f64::min))
            }
            SetRegion::Implicit(s) => match &s.signed_distance {
                Some(sd) => Ok((-sd(x)).max(0.0)),
                None if !(s.predicate)(x) => Ok(0.0),
                None => Err(Error::UnsupportedDistance(format!(
                    "complement of Implicit({})",
                    s.label
                ))),
            },
            SetRegion::Inflated(a, r) => {
                let d = a.dist(x)?;
                if d > *r {
                    Ok(0.0)
                } else if d == 0.0 {
                    Ok(a.depth(x)? + r)
                } else {
                    Ok(r - d)
                }
            }
            SetRegion::Union(parts) => {
                let mut best: f64 = 0.0;
                for p in parts {
                    best = best.max(p.depth(x)?);
                }
                Ok(best)
            }
            SetRegion::Intersection(parts) => {
                let mut best = f64::INFINITY;
                for p in parts {
                    best = best.min(p.depth(x)?);
                }
                Ok(if parts.is_empty() { f64::INFINITY } else { best })
            }
            SetRegion::Complement(a) => a.dist(x),
        }
    }

    fn as_box_intersection(&self) -> Option<Option<AxisBox>> {
        let SetRegion::Intersection(parts) = self else {
            return None;
        };
        let mut acc: Option<AxisBox> = None;
        for p in parts {
            let SetRegion::AxisBox(b) = p else {
                return None;
            };
            acc = match acc {
                None => Some(b.clone()),
                Some(a) => match a.intersect(b) {
                    Some(c) => Some(c),
                    None => return Some(None),
                },
            };
        }
        Some(acc)
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        match self {
            SetRegion::Ball { .. } | SetRegion::AxisBox(_) => {
                self.dist(x).map(|d| d <= tol).unwrap_or(false)
            }
            SetRegion::HalfSpaces(hs) => hs.iter().all(|(n, b)| n.dot(x) - b <= tol * n.norm()),
            SetRegion::Implicit(s) => (s.predicate)(x),
            SetRegion::Inflated(a, r) => {
                if *r == 0.0 {
                    return a.contains(x, tol);
                }
                a.contains(x, tol) || a.dist(x).map(|d| d <= r + tol).unwrap_or(false)
            }
            SetRegion::Union(parts) => parts.iter().any(|p| p.contains(x, tol)),
            SetRegion::Intersection(parts) => parts.iter().all(|p| p.contains(x, tol)),
            SetRegion::Complement(a) => match a.depth(x) {
                Ok(d) => d <= tol,
                Err(_) => !a.contains(x, 0.0),
            },
        }
    }

    /// Axis-aligned box containing the set, if one is known.
    pub fn bounding_box(&self) -> Option<AxisBox> {
        match self {
            SetRegion::Ball { center, radius } => Some(AxisBox {
                lo: center.add_scalar(-radius),
                hi: center.add_scalar(*radius),
            }),
            SetRegion::AxisBox(b) => Some(b.clone()),
            SetRegion::HalfSpaces(_) | SetRegion::Complement(_) => None,
            SetRegion::Implicit(s) => Some(s.bbox.clone()),
            SetRegion::Inflated(a, r) => a.bounding_box().map(|b| b.inflate(*r)),
            SetRegion::Union(parts) => {
                let mut acc: Option<AxisBox> = None;
                for p in parts {
                    let b = p.bounding_box()?;
                    acc = Some(match acc {
                        None => b,
                        Some(a) => a.hull(&b),
                    });
                }
                acc
            }
            SetRegion::Intersection(parts) => {
                let mut acc: Option<AxisBox> = None;
                for b in parts.iter().filter_map(|p| p.bounding_box()) {
                    acc = match acc {
                        None => Some(b),
                        Some(a) => Some(a.intersect(&b).unwrap_or_else(|| {
                            let c = a.center();
                            AxisBox {
                                lo: c.clone(),
                                hi: c,
                            }
                        })),
                    };
                }
                acc
            }
        }
    }

    /// Bounding box clipped to `within`, for sampling sets that are unbounded
    /// along some axes.
    pub fn sampling_box(&self, within: &AxisBox) -> Option<AxisBox> {
        match self.bounding_box() {
            Some(b) => b.intersect(within),
            None => Some(within.clone()),
        }
    }
}

pub fn dist_to_set(x: &Vector, a: &SetRegion) -> Result<f64> {
    a.dist(x)
}

pub fn contains(a: &SetRegion, x: &Vector, tol: f64) -> bool {
    a.contains(x, tol)
}

pub fn inflate(a: &SetRegion, r: f64) -> SetRegion {
    SetRegion::Inflated(Box::new(a.clone()), r.max(0.0))
}

/// ω(x) = |x|_A (1 + 1/dist(x, O^c)), infinite outside O.
#[derive(Clone, Debug)]
pub struct ProperIndicator {
    pub target: SetRegion,
    pub domain: SetRegion,
    pub tol: f64,
}

impl ProperIndicator {
    pub fn eval(&self, x: &Vector) -> f64 {
        let dc = match self.domain.depth(x) {
            Ok(d) => d,
            Err(_) => return f64::INFINITY,
        };
        if dc <= 0.0 {
            return f64::INFINITY;
        }
        let da = self.target.dist(x).unwrap_or(f64::INFINITY);
        if da == 0.0 {
            return 0.0;
        }
        da * (1.0 + 1.0 / dc)
    }
}

pub fn make_proper_indicator(a: &SetRegion, o: &SetRegion, tol: f64) -> Result<ProperIndicator> {
    let bbox = a
        .bounding_box()
        .filter(AxisBox::is_finite)
        .ok_or_else(|| Error::InvalidArgument("target set must be compact".into()))?;
    let per_axis = match bbox.dim() {
        1 => 201,
        2 => 61,
        3 => 21,
        _ => 7,
    };
    let probes = bbox.grid(&vec![per_axis; bbox.dim()])?;
    let mut clearance = f64::INFINITY;
    let mut seen = 0usize;
    for p in probes.iter().filter(|p| a.contains(p, tol)) {
        a.dist(p)?;
        clearance = clearance.min(o.depth(p)?);
        seen += 1;
    }
    if seen == 0 {
        clearance = o.depth(&bbox.center())?;
    }
    if clearance <= tol {
        return Err(Error::DegenerateDomain { clearance, tol });
    }
    Ok(ProperIndicator {
        target: a.clone(),
        domain: o.clone(),
        tol,
    })
}
