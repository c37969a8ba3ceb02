//! Deriving counterfactual mediator policies from a model.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::intervention::policy::{
    KeyMaker, MediatorPolicy, PolicyKind, Stratification, TransitionCounts,
};
use crate::scm::compiled::CompiledScm;
use crate::scm::engine::{fold_states, Regime, ENUMERATION_BUDGET};
use crate::scm::spec::ScmSpec;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    /// Enumerate the counterfactual law exactly.
    Exact,
    /// Estimate transition frequencies from `n_fit` simulated individuals.
    MonteCarlo,
    /// Exact when the model is within the enumeration budget.
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyFit {
    #[serde(default)]
    pub method: FitMethod,
    pub n_fit: u64,
}

impl PolicyFit {
    pub fn exact() -> Self {
        PolicyFit {
            method: FitMethod::Exact,
            n_fit: 0,
        }
    }

    pub fn monte_carlo(n_fit: u64) -> Self {
        PolicyFit {
            method: FitMethod::MonteCarlo,
            n_fit,
        }
    }

    pub fn auto(n_fit: u64) -> Self {
        PolicyFit {
            method: FitMethod::Auto,
            n_fit,
        }
    }
}

/// Counterfactual mediator law under `do(A = a_ref)` given the baseline
/// stratum and mediator history.
pub fn derive_policy_marginal(
    spec: &ScmSpec,
    a_ref: u8,
    fit: PolicyFit,
    seed: u64,
    strata: &Stratification,
) -> Result<MediatorPolicy> {
    let scm = CompiledScm::new(spec)?;
    derive_compiled(&scm, a_ref, fit, seed, strata, false)
}

/// Counterfactual mediator law under `do(A = a_ref)` given the baseline
/// stratum, covariate history and mediator history. Carries the marginal
/// policy as fallback for histories never reached under `a_ref`.
pub fn derive_policy_conditional(
    spec: &ScmSpec,
    a_ref: u8,
    fit: PolicyFit,
    seed: u64,
    strata: &Stratification,
) -> Result<MediatorPolicy> {
    let scm = CompiledScm::new(spec)?;
    derive_compiled(&scm, a_ref, fit, seed, strata, true)
}

/// Whether `fit` resolves to exact enumeration for the reference arm.
pub(crate) fn uses_exact(scm: &CompiledScm, a_ref: u8, fit: PolicyFit) -> bool {
    match fit.method {
        FitMethod::Exact => true,
        FitMethod::MonteCarlo => false,
        FitMethod::Auto => Regime::natural(scm)
            .with_exposure(Some(a_ref))
            .configuration_count()
            .is_ok_and(|c| c <= ENUMERATION_BUDGET),
    }
}

pub(crate) fn derive_compiled(
    scm: &CompiledScm,
    a_ref: u8,
    fit: PolicyFit,
    seed: u64,
    strata: &Stratification,
    conditional: bool,
) -> Result<MediatorPolicy> {
    let layout = &scm.layout;
    let marginal_keys = KeyMaker::new(layout, strata, false)?;
    let conditional_keys = if conditional {
        Some(KeyMaker::new(layout, strata, true)?)
    } else {
        None
    };
    let regime = Regime::natural(scm).with_exposure(Some(a_ref));
    let record = |acc: &mut (TransitionCounts, TransitionCounts), state: &[f64], w: f64| {
        acc.0.record(&marginal_keys, state, w);
        if let Some(k) = &conditional_keys {
            acc.1.record(k, state, w);
        }
    };
    let (marginal, history) = if uses_exact(scm, a_ref, fit) {
        let mut acc = Default::default();
        regime.enumerate(|state, p| record(&mut acc, state, p))?;
        acc
    } else {
        if fit.n_fit == 0 {
            return Err(crate::error::Error::Config(
                "policy fit needs n_fit >= 1".into(),
            ));
        }
        fold_states(
            &regime,
            fit.n_fit,
            seed,
            <(TransitionCounts, TransitionCounts)>::default,
            |acc, state| record(acc, state, 1.0),
            |a, b| (a.0.merge(b.0), a.1.merge(b.1)),
        )?
        .0
    };
    let marginal = marginal.finish(
        &marginal_keys,
        layout,
        PolicyKind::CounterfactualMarginal { a_ref },
        strata,
    )?;
    match conditional_keys {
        None => Ok(marginal),
        Some(keys) => {
            let mut policy = history.finish(
                &keys,
                layout,
                PolicyKind::CounterfactualConditional { a_ref },
                strata,
            )?;
            policy.fallback = Some(Box::new(marginal));
            Ok(policy)
        }
    }
}
