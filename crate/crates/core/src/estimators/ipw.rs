//! Inverse probability weighting for the stochastic direct effect.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::estimands::{csde_contrast, EstimandKind, EstimandReport, Method};
use crate::estimators::bootstrap::bootstrap;
use crate::estimators::data::ObservedDataset;
use crate::estimators::models::{fit_models, ModelStructure};
use crate::estimators::positivity::{baseline_policy, require_mediator_support};
use crate::estimators::{estimator_report, ArmMeans, EstimatorOptions, ReportParts};
use crate::intervention::policy::{CompiledPolicy, MediatorPolicy};
use crate::scm::engine::{DrawStats, MediatorMode, NodeLaw, Regime};

/// Per-pattern weights, aligned with the dataset's distinct patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct IpwWeights {
    pub arm: Vec<u8>,
    /// Rows sharing the pattern.
    pub count: Vec<f64>,
    /// Product over time of policy over fitted mediator probabilities.
    pub mediator_factor: Vec<f64>,
    /// Normalized, capped weight including the exposure factor.
    pub weight: Vec<f64>,
    /// Row mass whose weight hit the cap, per arm.
    pub truncated: [f64; 2],
}

/// Normalized weights for `policy` with nuisance models from `structure`.
pub fn ipw_weights(
    data: &ObservedDataset,
    policy: &MediatorPolicy,
    structure: &ModelStructure,
    opts: &EstimatorOptions,
) -> Result<IpwWeights> {
    compute_weights(
        data,
        data.counts(),
        baseline_policy(policy)?,
        structure,
        opts,
    )
}

pub fn estimate_csde_ipw(
    data: &ObservedDataset,
    policy: &MediatorPolicy,
    structure: &ModelStructure,
    opts: &EstimatorOptions,
) -> Result<EstimandReport> {
    let policy = baseline_policy(policy)?;
    let contrast = csde_contrast(EstimandKind::Csde, policy)?;
    let weights = compute_weights(data, data.counts(), policy, structure, opts)?;
    let point = weighted_means(data, &weights);
    let boot = bootstrap(data, opts.bootstrap_replicates, opts.seed, |w| {
        let weights = compute_weights(data, w, policy, structure, opts)?;
        weighted_means(data, &weights).value()
    })?;
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("truncated_arm1".into(), weights.truncated[1]);
    diagnostics.insert("truncated_arm0".into(), weights.truncated[0]);
    for a in 0..2u8 {
        let max = weights
            .weight
            .iter()
            .zip(&weights.arm)
            .filter(|(_, arm)| **arm == a)
            .map(|(w, _)| *w)
            .fold(0.0, f64::max);
        diagnostics.insert(format!("max_weight_arm{a}"), max);
    }
    estimator_report(
        data,
        ReportParts {
            kind: EstimandKind::Csde,
            method: Method::Ipw,
            plan_digest: contrast.digest(),
            diagnostics,
        },
        &point,
        boot,
        opts.seed,
    )
}

fn weighted_means(data: &ObservedDataset, weights: &IpwWeights) -> ArmMeans {
    let layout = data.layout();
    let (y, d) = (layout.composite, layout.slice(layout.horizon()).birth);
    let mut means = ArmMeans::default();
    let mut mass = [0.0; 2];
    for (k, state) in data.patterns().iter().enumerate() {
        let (a, m) = (
            weights.arm[k] as usize,
            weights.count[k] * weights.weight[k],
        );
        mass[a] += weights.count[k];
        if state[y] == 1.0 {
            means.num[a] += m;
        }
        if state[d] == 1.0 {
            means.den[a] += m;
        }
    }
    for a in 0..2 {
        means.num[a] /= mass[a];
        means.den[a] /= mass[a];
    }
    means
}

/// Probability that `regime` assigns the value `state[node]` holds.
fn likelihood(regime: &Regime, node: usize, state: &[f64]) -> Result<f64> {
    let v = state[node];
    Ok(
        match regime.node_law(node, state, &mut DrawStats::default())? {
            NodeLaw::Fixed(f) => f64::from(f == v || (f.is_nan() && v.is_nan())),
            NodeLaw::Bernoulli(p) => {
                if v == 1.0 {
                    p
                } else {
                    1.0 - p
                }
            }
            _ => {
                return Err(Error::Unsupported(format!(
                    "weights need a Bernoulli law at {}",
                    regime.scm.layout.name(node)
                )))
            }
        },
    )
}

fn compute_weights(
    data: &ObservedDataset,
    weights: &[f64],
    policy: &MediatorPolicy,
    structure: &ModelStructure,
    opts: &EstimatorOptions,
) -> Result<IpwWeights> {
    require_mediator_support(data, weights, policy)?;
    let layout = data.layout();
    let models = fit_models(data, weights, structure)?;
    let n = data.pattern_count();
    let mut out = IpwWeights {
        arm: vec![0; n],
        count: weights.to_vec(),
        mediator_factor: vec![0.0; n],
        weight: vec![0.0; n],
        truncated: [0.0; 2],
    };
    let mut low = Vec::new();
    for a in 0..2u8 {
        let scm = &models.arms[a as usize];
        let compiled = CompiledPolicy::new(policy, scm)?;
        let fitted = Regime::natural(scm);
        let target = Regime::natural(scm).with_mediator(MediatorMode::Policy(&compiled));
        let mut raw = Vec::new();
        for (k, state) in data.patterns().iter().enumerate() {
            if state[layout.exposure] != f64::from(a) {
                continue;
            }
            out.arm[k] = a;
            if weights[k] <= 0.0 {
                continue;
            }
            let pi = likelihood(&fitted, layout.exposure, state)?;
            if !(pi > 0.0) {
                low.push(format!("row pattern {k}: fitted P(A={a} | L0) = {pi}"));
                continue;
            }
            let mut factor = 1.0;
            'time: for t in 1..=layout.horizon() {
                let slice = layout.slice(t);
                for node in [slice.death, slice.birth] {
                    let p = likelihood(&target, node, state)?;
                    if p == 0.0 {
                        factor = 0.0;
                        break 'time;
                    }
                    let g = likelihood(&fitted, node, state)?;
                    if !(g > 0.0) {
                        low.push(format!(
                            "row pattern {k}: fitted probability of {} is {g}",
                            layout.name(node)
                        ));
                        factor = f64::NAN;
                        break 'time;
                    }
                    factor *= p / g;
                }
            }
            out.mediator_factor[k] = factor;
            raw.push((k, factor / pi));
        }
        if !low.is_empty() {
            continue;
        }
        // Hajek normalization so weights average one within the arm.
        let mass: f64 = raw.iter().map(|(k, _)| weights[*k]).sum();
        let normalize = |raw: &mut Vec<(usize, f64)>| {
            let s: f64 = raw.iter().map(|(k, w)| weights[*k] * w).sum();
            if s > 0.0 {
                for (_, w) in raw.iter_mut() {
                    *w *= mass / s;
                }
            }
        };
        normalize(&mut raw);
        for (k, w) in raw.iter_mut() {
            if *w > opts.weight_cap {
                out.truncated[a as usize] += weights[*k];
                *w = opts.weight_cap;
            }
        }
        normalize(&mut raw);
        for (k, w) in raw {
            out.weight[k] = w;
        }
    }
    if !low.is_empty() {
        return Err(Error::Positivity { strata: low });
    }
    Ok(out)
}
