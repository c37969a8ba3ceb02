//! Exact values of the contrasts by enumerating both intervened models.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::estimands::{
    cde_contrast, check_forms, csde_contrast, cte_contrast, nde_conditional_contrast, ArmDetail,
    Contrast, EstimandKind, EstimandReport, Method,
};
use crate::intervention::derive::{derive_compiled, PolicyFit};
use crate::intervention::{
    InterventionPlan, MediatorPolicy, MediatorProfile, PreparedPlan, Stratification,
};
use crate::numeric::NeumaierSum;
use crate::scm::compiled::CompiledScm;
use crate::scm::spec::ScmSpec;

/// `(P(Y = 1), P(Z2_tau = 1), policy fallbacks)` under one plan.
pub(crate) fn exact_arm(scm: &CompiledScm, plan: &InterventionPlan) -> Result<(f64, f64, u64)> {
    let prepared = PreparedPlan::new(plan, scm)?;
    let layout = &scm.layout;
    let (y_node, d_node) = (layout.composite, layout.slice(layout.horizon()).birth);
    let mut num = NeumaierSum::default();
    let mut den = NeumaierSum::default();
    let stats = prepared.regime(scm).enumerate(|state, p| {
        if state[y_node] == 1.0 {
            num.add(p);
        }
        if state[d_node] == 1.0 {
            den.add(p);
        }
    })?;
    Ok((num.value(), den.value(), stats.policy_fallbacks))
}

pub(crate) fn exact_contrast(scm: &CompiledScm, contrast: &Contrast) -> Result<EstimandReport> {
    let (n1, d1, f1) = exact_arm(scm, &contrast.arm1)?;
    let (n0, d0, f0) = exact_arm(scm, &contrast.arm0)?;
    for (label, d) in [("arm1", d1), ("arm0", d0)] {
        if d <= 0.0 {
            return Err(Error::UndefinedEstimand {
                arm: format!("{label} of {}", contrast.kind.as_str()),
            });
        }
    }
    let (e1, e0) = contrast.exposures();
    let arm = |exposure, num: f64, den: f64| ArmDetail {
        exposure,
        numerator: num,
        denominator: den,
        conditional: num / den,
        n: 0,
        outcome_count: num,
        birth_count: den,
    };
    let (arm1, arm0) = (arm(e1, n1, d1), arm(e0, n0, d0));
    let value = arm1.ratio() - arm0.ratio();
    let conditional_form = arm1.conditional - arm0.conditional;
    check_forms(value, conditional_form)?;
    let mut diagnostics = BTreeMap::new();
    if f1 > 0 {
        diagnostics.insert("policy_fallback_paths_arm1".into(), f1 as f64);
    }
    if f0 > 0 {
        diagnostics.insert("policy_fallback_paths_arm0".into(), f0 as f64);
    }
    Ok(EstimandReport {
        estimand: contrast.kind,
        method: Method::Exact,
        value,
        mc_se: 0.0,
        conditional_form,
        arm1,
        arm0,
        n_sim: 0,
        seed: 0,
        pairing: None,
        plan_digest: contrast.digest(),
        diagnostics,
    })
}

fn strata_or_default(scm: &CompiledScm, strata: Option<&Stratification>) -> Stratification {
    strata
        .cloned()
        .unwrap_or_else(|| Stratification::discrete_baseline(&scm.layout))
}

pub fn exact_cte(spec: &ScmSpec) -> Result<EstimandReport> {
    let scm = CompiledScm::new(spec)?;
    exact_contrast(&scm, &cte_contrast())
}

pub fn exact_csde(spec: &ScmSpec, policy: &MediatorPolicy) -> Result<EstimandReport> {
    let scm = CompiledScm::new(spec)?;
    exact_contrast(&scm, &csde_contrast(EstimandKind::Csde, policy)?)
}

pub fn exact_cde(spec: &ScmSpec, profile: &MediatorProfile) -> Result<EstimandReport> {
    let scm = CompiledScm::new(spec)?;
    exact_contrast(&scm, &cde_contrast(profile))
}

/// Uses the exactly derived marginal policy.
pub fn exact_nde_marginal(
    spec: &ScmSpec,
    a_ref: u8,
    strata: Option<&Stratification>,
) -> Result<EstimandReport> {
    let scm = CompiledScm::new(spec)?;
    let policy = derive_compiled(
        &scm,
        a_ref,
        PolicyFit::exact(),
        0,
        &strata_or_default(&scm, strata),
        false,
    )?;
    exact_contrast(&scm, &csde_contrast(EstimandKind::NdeMarginal, &policy)?)
}

/// Uses the exactly derived history-conditional policy.
pub fn exact_nde_conditional(
    spec: &ScmSpec,
    a_ref: u8,
    strata: Option<&Stratification>,
) -> Result<EstimandReport> {
    let scm = CompiledScm::new(spec)?;
    let policy = derive_compiled(
        &scm,
        a_ref,
        PolicyFit::exact(),
        0,
        &strata_or_default(&scm, strata),
        true,
    )?;
    exact_contrast(&scm, &nde_conditional_contrast(&policy, a_ref))
}
