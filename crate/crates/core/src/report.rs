//! Verdict reports shared by checkers, monitors and falsifiers.
//!
//! Margins follow one convention everywhere: positive means the inequality
//! under test is violated by that amount.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::Vector;

/// Default absolute tolerance on certificate margins.
pub const MARGIN_TOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Inconclusive => "INCONCLUSIVE",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub j: usize,
    pub t: f64,
    pub x: Vec<f64>,
}

impl Witness {
    pub fn point(x: &Vector) -> Self {
        Self {
            j: 0,
            t: 0.0,
            x: x.iter().copied().collect(),
        }
    }

    pub fn at(j: usize, t: f64, x: &Vector) -> Self {
        Self {
            j,
            t,
            x: x.iter().copied().collect(),
        }
    }

    pub fn state(&self) -> Vector {
        Vector::from_column_slice(&self.x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub condition: String,
    pub margin: f64,
    pub witness: Witness,
    /// Index of the offending arc for trajectory-based checks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arc: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub id: String,
    pub verdict: Verdict,
    pub margin: f64,
    pub samples: usize,
    pub witness: Option<Witness>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub values: BTreeMap<String, f64>,
}

impl ConditionResult {
    /// Verdict from the worst margin against `tol`.
    pub fn from_margin(
        id: impl Into<String>,
        margin: f64,
        samples: usize,
        witness: Option<Witness>,
        tol: f64,
    ) -> Self {
        let verdict = if samples == 0 {
            Verdict::Inconclusive
        } else if margin > tol {
            Verdict::Fail
        } else {
            Verdict::Pass
        };
        Self {
            id: id.into(),
            verdict,
            margin: finite(margin),
            samples,
            witness,
            values: BTreeMap::new(),
        }
    }

    pub fn with_value(mut self, key: &str, v: f64) -> Self {
        self.values.insert(key.into(), finite(v));
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub samples_checked: usize,
    pub worst_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub settle_time: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub verdict: Verdict,
    pub condition: String,
    pub margin: f64,
    pub witness: Option<Witness>,
    pub stats: Stats,
    pub counterexamples: Vec<Counterexample>,
    pub conditions: Vec<ConditionResult>,
    pub notes: Vec<String>,
}

/// Clamp to finite values so reports always serialize.
pub fn finite(v: f64) -> f64 {
    if v.is_nan() {
        f64::MAX
    } else {
        v.clamp(-f64::MAX, f64::MAX)
    }
}

impl CheckReport {
    /// Combine per-condition results. FAIL if any fails, otherwise
    /// INCONCLUSIVE if any is inconclusive, otherwise PASS.
    pub fn from_conditions(
        name: impl Into<String>,
        conditions: Vec<ConditionResult>,
        notes: Vec<String>,
    ) -> Self {
        let verdict = if conditions.iter().any(|c| c.verdict == Verdict::Fail) {
            Verdict::Fail
        } else if conditions.is_empty()
            || conditions.iter().any(|c| c.verdict == Verdict::Inconclusive)
        {
            Verdict::Inconclusive
        } else {
            Verdict::Pass
        };
        let worst = conditions
            .iter()
            .filter(|c| c.samples > 0)
            .max_by(|a, b| a.margin.total_cmp(&b.margin));
        let counterexamples = conditions
            .iter()
            .filter(|c| c.verdict == Verdict::Fail)
            .filter_map(|c| {
                c.witness.clone().map(|w| Counterexample {
                    condition: c.id.clone(),
                    margin: c.margin,
                    witness: w,
                    arc: None,
                })
            })
            .collect();
        let samples = conditions.iter().map(|c| c.samples).sum();
        let (condition, margin, witness) = match (verdict, worst) {
            (_, Some(w)) => (w.id.clone(), w.margin, w.witness.clone()),
            (_, None) => (name.into(), 0.0, None),
        };
        Self {
            verdict,
            condition,
            margin,
            witness,
            stats: Stats {
                samples_checked: samples,
                worst_margin: margin,
                settle_time: None,
                extra: BTreeMap::new(),
            },
            counterexamples,
            conditions,
            notes,
        }
    }

    pub fn condition(&self, id: &str) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.id == id)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}
