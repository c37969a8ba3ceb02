//! Flat node ordering shared by the simulator, the enumerator and datasets.
//!
//! A trajectory is held as one `f64` per node in causal order; missing infant
//! values are `NaN`.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scm::spec::{Law, ScmSpec};

/// Value set of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Binary,
    Categorical(usize),
    Continuous,
    /// 0, 1 or missing.
    Tristate,
}

impl Domain {
    /// Number of table levels, `None` for continuous values.
    pub fn radix(self) -> Option<usize> {
        match self {
            Domain::Binary => Some(2),
            Domain::Tristate => Some(3),
            Domain::Categorical(k) => Some(k),
            Domain::Continuous => None,
        }
    }

    /// Table level of a value in this domain. Missing maps to the last level.
    #[inline]
    pub fn level(self, v: f64) -> usize {
        if v.is_nan() {
            2
        } else {
            v as usize
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Baseline,
    Exposure,
    Covariate,
    Death,
    Birth,
    InfantAlive,
    HivFree,
    Composite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeInfo {
    pub name: String,
    pub role: Role,
    /// 0 for baseline and exposure, the horizon for `y2` and `y`.
    pub time: usize,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSlice {
    pub covariates: Range<usize>,
    pub death: usize,
    pub birth: usize,
    pub infant: usize,
}

/// Column description of a population, independent of any laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub horizon: usize,
    pub baseline: Vec<(String, Domain)>,
    /// Covariate names per time point; always `horizon` entries.
    pub covariates: Vec<Vec<String>>,
}

impl Schema {
    pub fn from_spec(spec: &ScmSpec) -> Self {
        let baseline = spec
            .baseline
            .iter()
            .map(|b| {
                let d = match &b.law {
                    Law::Categorical { probs } => Domain::Categorical(probs.len()),
                    Law::Uniform { .. } => Domain::Continuous,
                    _ => Domain::Binary,
                };
                (b.name.clone(), d)
            })
            .collect();
        let covariates = (1..=spec.horizon)
            .map(|t| {
                spec.covariates
                    .get(t - 1)
                    .map(|c| c.iter().map(|n| n.name.clone()).collect())
                    .unwrap_or_default()
            })
            .collect();
        Schema {
            horizon: spec.horizon,
            baseline,
            covariates,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub nodes: Vec<NodeInfo>,
    index: HashMap<String, usize>,
    pub baseline: Range<usize>,
    pub exposure: usize,
    /// `slices[t - 1]` holds the nodes of time point `t`.
    pub slices: Vec<TimeSlice>,
    pub hiv_free: usize,
    pub composite: usize,
    pub schema: Schema,
}

impl Layout {
    pub fn new(schema: &Schema) -> Result<Self> {
        let mut nodes = Vec::new();
        let mut push = |name: String, role, time, domain| {
            nodes.push(NodeInfo {
                name,
                role,
                time,
                domain,
            });
            nodes.len() - 1
        };
        for (name, domain) in &schema.baseline {
            push(format!("l0.{name}"), Role::Baseline, 0, *domain);
        }
        let baseline = 0..schema.baseline.len();
        let exposure = push("a".into(), Role::Exposure, 0, Domain::Binary);
        let mut slices = Vec::with_capacity(schema.horizon);
        for t in 1..=schema.horizon {
            let first = {
                let names = schema
                    .covariates
                    .get(t - 1)
                    .map(Vec::as_slice)
                    .unwrap_or(&[]);
                let mut first = None;
                let mut last = 0;
                for n in names {
                    let i = push(format!("l{t}.{n}"), Role::Covariate, t, Domain::Binary);
                    first.get_or_insert(i);
                    last = i + 1;
                }
                first.map(|f| f..last)
            };
            let death = push(format!("z1_{t}"), Role::Death, t, Domain::Binary);
            let birth = push(format!("z2_{t}"), Role::Birth, t, Domain::Binary);
            let infant = push(format!("y1_{t}"), Role::InfantAlive, t, Domain::Tristate);
            slices.push(TimeSlice {
                covariates: first.unwrap_or(death..death),
                death,
                birth,
                infant,
            });
        }
        let hiv_free = push("y2".into(), Role::HivFree, schema.horizon, Domain::Tristate);
        let composite = push("y".into(), Role::Composite, schema.horizon, Domain::Binary);

        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.name.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate node name {:?}", n.name)));
            }
        }
        Ok(Layout {
            nodes,
            index,
            baseline,
            exposure,
            slices,
            hiv_free,
            composite,
            schema: schema.clone(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.slices.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn resolve(&self, name: &str) -> Result<usize> {
        self.get(name)
            .ok_or_else(|| Error::UnknownName(name.to_string()))
    }

    pub fn slice(&self, t: usize) -> &TimeSlice {
        &self.slices[t - 1]
    }

    pub fn name(&self, node: usize) -> &str {
        &self.nodes[node].name
    }

    /// Node indices of all time-varying covariates up to and including `t`.
    pub fn covariates_through(&self, t: usize) -> Vec<usize> {
        self.slices[..t]
            .iter()
            .flat_map(|s| s.covariates.clone())
            .collect()
    }
}
