//! Interventions on exposure and mediators, and simulation under them.

pub mod derive;
pub mod plan;
pub mod policy;

pub use derive::{derive_policy_conditional, derive_policy_marginal, FitMethod, PolicyFit};
pub use plan::{ExposurePlan, InterventionPlan, MediatorPlan, MediatorProfile};
pub use policy::{
    CompiledPolicy, MediatorPolicy, PolicyEntry, PolicyKind, Stratification, StratumVariable,
    STRATUM_BUDGET,
};

use crate::error::{Error, Result};
use crate::scm::compiled::CompiledScm;
use crate::scm::engine::{self, DrawStats, MediatorMode, Regime};
use crate::scm::spec::ScmSpec;
use crate::scm::trajectory::Population;

/// A plan checked against a model, with its policy compiled.
#[derive(Debug, Clone)]
pub(crate) struct PreparedPlan {
    exposure: Option<u8>,
    profile: Option<MediatorProfile>,
    policy: Option<CompiledPolicy>,
}

impl PreparedPlan {
    pub fn new(plan: &InterventionPlan, scm: &CompiledScm) -> Result<Self> {
        let exposure = plan.exposure.value();
        if exposure.is_some_and(|a| a > 1) {
            return Err(Error::Config("exposure must be set to 0 or 1".into()));
        }
        let (profile, policy) = match &plan.mediator {
            MediatorPlan::Natural => (None, None),
            MediatorPlan::Controlled(p) => {
                p.validate(scm.horizon(), scm.death_blocks_birth)?;
                (Some(p.clone()), None)
            }
            MediatorPlan::Stochastic(p) => (None, Some(CompiledPolicy::new(p, scm)?)),
        };
        Ok(PreparedPlan {
            exposure,
            profile,
            policy,
        })
    }

    pub fn regime<'a>(&'a self, scm: &'a CompiledScm) -> Regime<'a> {
        let mediator = match (&self.profile, &self.policy) {
            (Some(p), _) => MediatorMode::Controlled(p),
            (_, Some(p)) => MediatorMode::Policy(p),
            _ => MediatorMode::Natural,
        };
        Regime::natural(scm)
            .with_exposure(self.exposure)
            .with_mediator(mediator)
    }
}

/// Simulate the model with exposure and mediators replaced per `plan`.
pub fn simulate_counterfactual(
    spec: &ScmSpec,
    plan: &InterventionPlan,
    n: u64,
    seed: u64,
) -> Result<Population> {
    let scm = CompiledScm::new(spec)?;
    Ok(simulate_counterfactual_compiled(&scm, plan, n, seed)?.0)
}

pub(crate) fn simulate_counterfactual_compiled(
    scm: &CompiledScm,
    plan: &InterventionPlan,
    n: u64,
    seed: u64,
) -> Result<(Population, DrawStats)> {
    if n == 0 {
        return Err(Error::Config("population size must be at least 1".into()));
    }
    let prepared = PreparedPlan::new(plan, scm)?;
    let (rows, stats) = engine::simulate(&prepared.regime(scm), n, seed)?;
    Ok((
        Population {
            schema: scm.layout.schema.clone(),
            rows,
        },
        stats,
    ))
}
