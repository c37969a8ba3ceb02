//! Declarative model description and its JSON form.
//!
//! Node names used as parents:
//!
//! | node                | name          |
//! |---------------------|---------------|
//! | baseline covariate  | `l0.<name>`   |
//! | exposure            | `a`           |
//! | covariate at t      | `l<t>.<name>` |
//! | maternal death at t | `z1_<t>`      |
//! | live birth at t     | `z2_<t>`      |
//! | infant alive at t   | `y1_<t>`      |
//! | infant HIV-free     | `y2`          |
//! | composite outcome   | `y`           |

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// A structural function: how a node's value is produced from its parents.
///
/// For binary nodes the value is the probability that the node equals 1.
/// For the mediators it is the hazard of the 0 -> 1 transition among those
/// not yet absorbed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Law {
    Constant {
        p: f64,
    },
    /// `p = 1 / (1 + exp(-(intercept + sum coef[x] * x)))`; a missing parent
    /// contributes 0.
    Logistic {
        intercept: f64,
        #[serde(default)]
        coef: BTreeMap<String, f64>,
    },
    /// Probabilities indexed in mixed radix over `parents`, first parent most
    /// significant. Binary parents have two levels; `y1_<t>` and `y2` have a
    /// third level for missing.
    Table {
        parents: Vec<String>,
        p: Vec<f64>,
    },
    /// Baseline only: value `k` with probability `probs[k]`.
    Categorical {
        probs: Vec<f64>,
    },
    /// Baseline only: continuous uniform on `[lo, hi]`.
    Uniform {
        lo: f64,
        hi: f64,
    },
}

impl Law {
    pub fn constant(p: f64) -> Self {
        Law::Constant { p }
    }

    pub fn logistic<'a>(intercept: f64, coef: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        Law::Logistic {
            intercept,
            coef: coef.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    pub fn table(parents: &[&str], p: Vec<f64>) -> Self {
        Law::Table {
            parents: parents.iter().map(|s| s.to_string()).collect(),
            p,
        }
    }

    /// Names this law reads.
    pub fn parents(&self) -> Vec<&str> {
        match self {
            Law::Logistic { coef, .. } => coef.keys().map(String::as_str).collect(),
            Law::Table { parents, .. } => parents.iter().map(String::as_str).collect(),
            _ => Vec::new(),
        }
    }

    pub fn is_binary(&self) -> bool {
        !matches!(self, Law::Categorical { .. } | Law::Uniform { .. })
    }

    /// True when the law cannot produce randomness.
    pub fn is_degenerate(&self) -> bool {
        match self {
            Law::Constant { p } => *p == 0.0 || *p == 1.0,
            Law::Table { p, .. } => p.iter().all(|q| *q == 0.0 || *q == 1.0),
            Law::Categorical { probs } => probs.iter().filter(|q| **q > 0.0).count() <= 1,
            _ => false,
        }
    }

    /// Drop a parent. Logistic laws lose the coefficient; table cells are
    /// averaged over the dropped dimension, which needs every parent's radix.
    pub fn without_parent(&self, name: &str, radices: &[usize]) -> Law {
        match self {
            Law::Logistic { intercept, coef } => Law::Logistic {
                intercept: *intercept,
                coef: coef
                    .iter()
                    .filter(|(k, _)| *k != name)
                    .map(|(k, v)| (k.clone(), *v))
                    .collect(),
            },
            Law::Table { parents, p } => {
                let Some(pos) = parents.iter().position(|q| q == name) else {
                    return self.clone();
                };
                let inner: usize = radices[pos + 1..].iter().product();
                let r = radices[pos];
                let outer: usize = radices[..pos].iter().product();
                let mut out = Vec::with_capacity(outer * inner);
                for o in 0..outer {
                    for i in 0..inner {
                        let s: f64 = (0..r).map(|k| p[(o * r + k) * inner + i]).sum();
                        out.push(s / r as f64);
                    }
                }
                let mut parents = parents.clone();
                parents.remove(pos);
                Law::Table { parents, p: out }
            }
            other => other.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedLaw {
    pub name: String,
    pub law: Law,
}

impl NamedLaw {
    pub fn new(name: &str, law: Law) -> Self {
        Self {
            name: name.to_string(),
            law,
        }
    }
}

fn yes() -> bool {
    true
}

/// The longitudinal structural causal model.
///
/// Causal order: `L0 -> A -> (L_1 -> Z1_1 -> Z2_1 -> Y1_1) -> ... -> Y2 -> Y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScmSpec {
    pub horizon: usize,
    /// A mother who has died cannot newly give birth.
    #[serde(default = "yes")]
    pub death_blocks_birth: bool,
    /// Use one exogenous uniform for both mediators at each time point.
    #[serde(default)]
    pub shared_mediator_noise: bool,
    #[serde(default)]
    pub baseline: Vec<NamedLaw>,
    pub exposure: Law,
    /// Time-varying covariates, one list per time point (empty means none).
    #[serde(default)]
    pub covariates: Vec<Vec<NamedLaw>>,
    pub death: Vec<Law>,
    pub birth: Vec<Law>,
    pub infant_survival: Vec<Law>,
    pub infant_hiv_free: Law,
}

impl ScmSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Covariate laws at time `t` (1-based), empty if none declared.
    pub fn covariates_at(&self, t: usize) -> &[NamedLaw] {
        self.covariates.get(t - 1).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Mutable access to every law, paired with its location.
    pub fn laws_mut(&mut self) -> Vec<(String, &mut Law)> {
        let mut out: Vec<(String, &mut Law)> = Vec::new();
        for (i, b) in self.baseline.iter_mut().enumerate() {
            out.push((format!("baseline[{i}]"), &mut b.law));
        }
        out.push(("exposure".into(), &mut self.exposure));
        for (t, covs) in self.covariates.iter_mut().enumerate() {
            for (i, c) in covs.iter_mut().enumerate() {
                out.push((format!("covariates[{t}][{i}]"), &mut c.law));
            }
        }
        for (t, l) in self.death.iter_mut().enumerate() {
            out.push((format!("death[{t}]"), l));
        }
        for (t, l) in self.birth.iter_mut().enumerate() {
            out.push((format!("birth[{t}]"), l));
        }
        for (t, l) in self.infant_survival.iter_mut().enumerate() {
            out.push((format!("infant_survival[{t}]"), l));
        }
        out.push(("infant_hiv_free".into(), &mut self.infant_hiv_free));
        out
    }
}
