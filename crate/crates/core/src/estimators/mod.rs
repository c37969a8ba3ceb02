//! Estimators that use only observed one-world data.

pub mod bootstrap;
pub mod cte;
pub mod data;
pub(crate) mod fit;
pub mod gcomp;
pub mod ipw;
pub mod models;
pub mod positivity;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use cte::estimate_cte;
pub use data::ObservedDataset;
pub use gcomp::estimate_csde_gcomp;
pub use ipw::{estimate_csde_ipw, ipw_weights, IpwWeights};
pub use models::{Family, ModelStructure, NodeModel};
pub use positivity::{positivity_diagnostics, Assumption, PositivityFlag, PositivityReport};

use crate::error::{Error, Result};
use crate::estimands::{check_forms, ArmDetail, EstimandKind, EstimandReport, Method};
use crate::estimators::bootstrap::BootstrapSummary;
use crate::intervention::policy::{
    KeyMaker, MediatorPolicy, PolicyKind, Stratification, TransitionCounts,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integration {
    /// Exact when the fitted model is within the enumeration budget.
    #[default]
    Auto,
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorOptions {
    pub bootstrap_replicates: usize,
    pub seed: u64,
    /// Cap on Hajek-normalized weights.
    pub weight_cap: f64,
    pub integration: Integration,
    /// Draws per arm when integrating by simulation.
    pub n_integration: u64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            bootstrap_replicates: 200,
            seed: 0,
            weight_cap: 50.0,
            integration: Integration::Auto,
            n_integration: 100_000,
        }
    }
}

/// Empirical mediator law of one exposure arm given baseline strata and
/// mediator history.
pub fn fit_data_adaptive_policy(
    data: &ObservedDataset,
    source_arm: u8,
    strata: &Stratification,
) -> Result<MediatorPolicy> {
    if source_arm > 1 {
        return Err(Error::Config("source arm must be 0 or 1".into()));
    }
    fit_policy_weighted(data, data.counts(), source_arm, strata)
}

pub(crate) fn fit_policy_weighted(
    data: &ObservedDataset,
    weights: &[f64],
    source_arm: u8,
    strata: &Stratification,
) -> Result<MediatorPolicy> {
    let layout = data.layout();
    let keys = KeyMaker::new(layout, strata, false)?;
    let mut counts = TransitionCounts::default();
    for (state, &w) in data.patterns().iter().zip(weights) {
        if w > 0.0 && state[layout.exposure] == f64::from(source_arm) {
            counts.record(&keys, state, w);
        }
    }
    counts.finish(
        &keys,
        layout,
        PolicyKind::DataAdaptive { source_arm },
        strata,
    )
}

/// Standardized means `num[a] = E[Y^a]`, `den[a] = P(Z2_tau^a = 1)`.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct ArmMeans {
    pub num: [f64; 2],
    pub den: [f64; 2],
}

impl ArmMeans {
    pub fn value(&self) -> Result<f64> {
        for a in [1, 0] {
            if !(self.den[a] > 0.0) {
                return Err(Error::UndefinedEstimand {
                    arm: format!("the estimated law of arm {a}"),
                });
            }
        }
        Ok(self.num[1] / self.den[1] - self.num[0] / self.den[0])
    }
}

pub(crate) struct ReportParts {
    pub kind: EstimandKind,
    pub method: Method,
    pub plan_digest: String,
    pub diagnostics: BTreeMap<String, f64>,
}

pub(crate) fn estimator_report(
    data: &ObservedDataset,
    parts: ReportParts,
    point: &ArmMeans,
    boot: BootstrapSummary,
    seed: u64,
) -> Result<EstimandReport> {
    let value = point.value()?;
    let layout = data.layout();
    let (y, d) = (layout.composite, layout.slice(layout.horizon()).birth);
    let arm = |a: u8| {
        let (mut n, mut yc, mut dc) = (0.0, 0.0, 0.0);
        for (s, w) in data.patterns().iter().zip(data.counts()) {
            if s[layout.exposure] == f64::from(a) {
                n += w;
                yc += if s[y] == 1.0 { *w } else { 0.0 };
                dc += if s[d] == 1.0 { *w } else { 0.0 };
            }
        }
        let i = a as usize;
        ArmDetail {
            exposure: a,
            numerator: point.num[i],
            denominator: point.den[i],
            conditional: point.num[i] / point.den[i],
            n: n as u64,
            outcome_count: yc,
            birth_count: dc,
        }
    };
    let (arm1, arm0) = (arm(1), arm(0));
    let conditional_form = arm1.conditional - arm0.conditional;
    check_forms(value, conditional_form)?;
    let mut diagnostics = parts.diagnostics;
    diagnostics.insert("bootstrap_replicates".into(), boot.replicates as f64);
    diagnostics.insert("bootstrap_failures".into(), boot.failures as f64);
    Ok(EstimandReport {
        estimand: parts.kind,
        method: parts.method,
        value,
        mc_se: boot.se,
        conditional_form,
        arm1,
        arm0,
        n_sim: data.len() as u64,
        seed,
        pairing: None,
        plan_digest: parts.plan_digest,
        diagnostics,
    })
}
