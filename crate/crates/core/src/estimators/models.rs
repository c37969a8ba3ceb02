//! Which regression fits each node, and fitting them within exposure arms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::data::ObservedDataset;
use crate::estimators::fit::{logistic_irls, proportion, Group};
use crate::scm::compiled::CompiledScm;
use crate::scm::engine::is_drawn;
use crate::scm::layout::{Domain, Layout, Schema};
use crate::scm::spec::{Law, NamedLaw, ScmSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Logistic,
    /// Saturated: one probability per parent configuration.
    Table,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeModel {
    pub node: String,
    pub family: Family,
    pub parents: Vec<String>,
}

/// Regression families and adjustment sets for every fitted node.
///
/// All nodes except the exposure are fitted separately within each exposure
/// arm, so `a` never appears as a parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStructure {
    pub death_blocks_birth: bool,
    pub exposure: NodeModel,
    pub nodes: Vec<NodeModel>,
}

impl ModelStructure {
    /// The generating model's families and parent sets.
    pub fn from_spec(spec: &ScmSpec) -> Result<Self> {
        let layout = Layout::new(&Schema::from_spec(spec))?;
        let model = |node: usize, law: &Law| {
            let (family, parents) = match law {
                Law::Logistic { coef, .. } => (Family::Logistic, coef.keys().cloned().collect()),
                Law::Table { parents, .. } => (Family::Table, parents.clone()),
                _ => (Family::Constant, Vec::new()),
            };
            let parents: Vec<String> = parents.into_iter().filter(|p| p != "a").collect();
            let family = if parents.is_empty() {
                Family::Constant
            } else {
                family
            };
            NodeModel {
                node: layout.name(node).to_string(),
                family,
                parents,
            }
        };
        let mut nodes = Vec::new();
        for t in 1..=spec.horizon {
            let slice = layout.slice(t);
            for (k, c) in spec.covariates_at(t).iter().enumerate() {
                nodes.push(model(slice.covariates.start + k, &c.law));
            }
            nodes.push(model(slice.death, &spec.death[t - 1]));
            nodes.push(model(slice.birth, &spec.birth[t - 1]));
            nodes.push(model(slice.infant, &spec.infant_survival[t - 1]));
        }
        nodes.push(model(layout.hiv_free, &spec.infant_hiv_free));
        Ok(ModelStructure {
            death_blocks_birth: spec.death_blocks_birth,
            exposure: model(layout.exposure, &spec.exposure),
            nodes,
        })
    }

    /// Drop `name` from every adjustment set.
    pub fn without_covariate(&self, name: &str) -> Self {
        let mut out = self.clone();
        for m in std::iter::once(&mut out.exposure).chain(out.nodes.iter_mut()) {
            m.parents.retain(|p| p != name);
            if m.parents.is_empty() {
                m.family = Family::Constant;
            }
        }
        out
    }

    pub fn node(&self, name: &str) -> Option<&NodeModel> {
        self.nodes.iter().find(|m| m.node == name)
    }
}

/// Fitted laws assembled into one model per exposure arm.
#[derive(Debug, Clone)]
pub(crate) struct FittedModels {
    /// `arms[a]` holds the laws fitted among rows with `A = a`.
    pub arms: Vec<CompiledScm>,
}

pub(crate) fn fit_models(
    data: &ObservedDataset,
    weights: &[f64],
    structure: &ModelStructure,
) -> Result<FittedModels> {
    let layout = data.layout();
    let exposure = fit_node(
        data,
        weights,
        &structure.exposure,
        None,
        structure.death_blocks_birth,
    )?;
    let mut arms = Vec::with_capacity(2);
    for a in 0..2u8 {
        let mut laws: BTreeMap<usize, Law> = BTreeMap::new();
        for m in &structure.nodes {
            let node = layout.resolve(&m.node)?;
            laws.insert(
                node,
                fit_node(data, weights, m, Some(a), structure.death_blocks_birth)?,
            );
        }
        let spec = assemble(layout, &exposure, laws, structure.death_blocks_birth);
        arms.push(CompiledScm::compile(&spec)?);
    }
    Ok(FittedModels { arms })
}

fn fit_node(
    data: &ObservedDataset,
    weights: &[f64],
    model: &NodeModel,
    arm: Option<u8>,
    death_blocks_birth: bool,
) -> Result<Law> {
    let layout = data.layout();
    let node = layout.resolve(&model.node)?;
    let parents = model
        .parents
        .iter()
        .map(|p| {
            let idx = layout.resolve(p)?;
            if idx >= node {
                return Err(Error::Config(format!(
                    "{p} does not precede {}",
                    model.node
                )));
            }
            Ok(idx)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut groups: BTreeMap<Vec<u64>, Group> = BTreeMap::new();
    for (state, &w) in data.patterns().iter().zip(weights) {
        if w <= 0.0 || arm.is_some_and(|a| state[layout.exposure] != f64::from(a)) {
            continue;
        }
        if !is_drawn(layout, death_blocks_birth, node, state) {
            continue;
        }
        let x: Vec<f64> = parents.iter().map(|&p| state[p]).collect();
        let key = x
            .iter()
            .map(|v| if v.is_nan() { u64::MAX } else { v.to_bits() })
            .collect();
        let g = groups.entry(key).or_insert_with(|| (x, 0.0, 0.0));
        if state[node] == 1.0 {
            g.2 += w;
        } else {
            g.1 += w;
        }
    }
    let groups: Vec<Group> = groups.into_values().collect();
    Ok(match model.family {
        Family::Constant => {
            let (w0, w1) = groups
                .iter()
                .fold((0.0, 0.0), |acc, g| (acc.0 + g.1, acc.1 + g.2));
            Law::Constant {
                p: proportion(w0, w1),
            }
        }
        Family::Table => {
            let radices = parents
                .iter()
                .map(|&p| {
                    layout.nodes[p].domain.radix().ok_or_else(|| {
                        Error::Config(format!("table parent {} is continuous", layout.name(p)))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let cells: usize = radices.iter().product();
            let mut w = vec![(0.0, 0.0); cells];
            for (x, w0, w1) in &groups {
                let mut idx = 0;
                for (v, r) in x.iter().zip(&radices) {
                    idx = idx * r + if v.is_nan() { 2 } else { *v as usize };
                }
                w[idx].0 += w0;
                w[idx].1 += w1;
            }
            Law::Table {
                parents: model.parents.clone(),
                p: w.into_iter().map(|(a, b)| proportion(a, b)).collect(),
            }
        }
        Family::Logistic => {
            if groups.is_empty() {
                Law::Constant { p: f64::NAN }
            } else {
                let features: Vec<Group> = groups
                    .into_iter()
                    .map(|(x, w0, w1)| {
                        (
                            x.into_iter()
                                .map(|v| if v.is_nan() { 0.0 } else { v })
                                .collect(),
                            w0,
                            w1,
                        )
                    })
                    .collect();
                let beta = logistic_irls(&features, parents.len());
                Law::Logistic {
                    intercept: beta[0],
                    coef: model
                        .parents
                        .iter()
                        .cloned()
                        .zip(beta[1..].iter().copied())
                        .collect(),
                }
            }
        }
    })
}

/// Build a model over the data's schema from fitted laws. Baseline laws only
/// carry the domain; baseline values always come from the data.
fn assemble(
    layout: &Layout,
    exposure: &Law,
    mut laws: BTreeMap<usize, Law>,
    death_blocks_birth: bool,
) -> ScmSpec {
    let schema = &layout.schema;
    let mut take = |node: usize| laws.remove(&node).unwrap_or(Law::Constant { p: f64::NAN });
    let baseline = schema
        .baseline
        .iter()
        .map(|(name, d)| {
            let law = match d {
                Domain::Categorical(k) => Law::Categorical {
                    probs: vec![1.0 / *k as f64; *k],
                },
                Domain::Continuous => Law::Uniform { lo: 0.0, hi: 1.0 },
                _ => Law::Constant { p: 0.5 },
            };
            NamedLaw::new(name, law)
        })
        .collect();
    let mut covariates = Vec::new();
    let (mut death, mut birth, mut infant) = (Vec::new(), Vec::new(), Vec::new());
    for t in 1..=layout.horizon() {
        let slice = layout.slice(t).clone();
        covariates.push(
            slice
                .covariates
                .clone()
                .zip(&schema.covariates[t - 1])
                .map(|(node, name)| NamedLaw::new(name, take(node)))
                .collect(),
        );
        death.push(take(slice.death));
        birth.push(take(slice.birth));
        infant.push(take(slice.infant));
    }
    ScmSpec {
        horizon: layout.horizon(),
        death_blocks_birth,
        shared_mediator_noise: false,
        baseline,
        exposure: exposure.clone(),
        covariates,
        death,
        birth,
        infant_survival: infant,
        infant_hiv_free: take(layout.hiv_free),
    }
}
