//! Executing scenario requests and producing oracle sidecars.

use std::cell::OnceCell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimands::oracle::exact_contrast;
use crate::estimands::{
    cde_contrast, csde_contrast, cte_contrast, nde_conditional_contrast, run_contrast,
    EstimandKind, EstimandReport,
};
use crate::estimators::{
    estimate_csde_gcomp, estimate_csde_ipw, estimate_cte, fit_data_adaptive_policy,
    positivity_diagnostics, EstimatorOptions, ObservedDataset,
};
use crate::intervention::derive::{derive_compiled, PolicyFit};
use crate::intervention::{MediatorPolicy, MediatorProfile, Stratification};
use crate::rng::{derive_seed, tags};
use crate::scenario::report::{ErrorEntry, ProvenanceBlock, RunReport, RunResult, RunStatus};
use crate::scenario::{resolve_structure, EstimandRequest, PolicySource, Scenario, SCHEMA_VERSION};
use crate::scm::compiled::CompiledScm;
use crate::scm::simulate_compiled;

struct Context<'a> {
    scenario: &'a Scenario,
    scm: CompiledScm,
    strata: Stratification,
    data: OnceCell<std::result::Result<ObservedDataset, ErrorEntry>>,
}

impl<'a> Context<'a> {
    fn new(scenario: &'a Scenario) -> Result<Self> {
        Ok(Context {
            scenario,
            scm: CompiledScm::new(scenario.spec())?,
            strata: scenario.strata()?,
            data: OnceCell::new(),
        })
    }

    /// Observational data, simulated once per run.
    fn data(&self) -> Result<&ObservedDataset> {
        let data = self.data.get_or_init(|| {
            let seed = derive_seed(self.scenario.seed, tags::OBSERVATIONAL, 0);
            simulate_compiled(&self.scm, self.scenario.mc.n_observational, seed)
                .and_then(|pop| ObservedDataset::from_population(&pop))
                .map_err(|e| ErrorEntry::from(&e))
        });
        data.as_ref()
            .map_err(|e| Error::Config(format!("observational data unavailable: {}", e.message)))
    }

    fn fit(&self, exact: bool) -> PolicyFit {
        if exact {
            PolicyFit::exact()
        } else {
            PolicyFit {
                method: self.scenario.settings.policy_fit,
                n_fit: self.scenario.mc.n_policy_fit,
            }
        }
    }

    fn derive(
        &self,
        a_ref: u8,
        seed: u64,
        exact: bool,
        conditional: bool,
    ) -> Result<MediatorPolicy> {
        derive_compiled(
            &self.scm,
            a_ref,
            self.fit(exact),
            derive_seed(seed, tags::POLICY_FIT, 0),
            &self.strata,
            conditional,
        )
    }

    fn policy(&self, source: &PolicySource, seed: u64, exact: bool) -> Result<MediatorPolicy> {
        match source {
            PolicySource::Marginal { a_ref } => self.derive(*a_ref, seed, exact, false),
            PolicySource::DataAdaptive { source_arm } => {
                fit_data_adaptive_policy(self.data()?, *source_arm, &self.strata)
            }
            PolicySource::Hazards { death, birth } => {
                MediatorPolicy::from_hazards(death, birth, self.scenario.spec().death_blocks_birth)
            }
            PolicySource::Inline { policy } => Ok(policy.clone()),
            PolicySource::File { path } => Err(Error::Config(format!(
                "policy file {path} was not resolved"
            ))),
        }
    }

    fn estimator_options(&self, seed: u64) -> EstimatorOptions {
        let s = &self.scenario.settings;
        EstimatorOptions {
            bootstrap_replicates: self.scenario.mc.bootstrap_replicates,
            seed,
            weight_cap: s.weight_cap,
            integration: s.integration,
            n_integration: self.scenario.mc.n_truth,
        }
    }

    fn profile(&self, profile: &Option<MediatorProfile>) -> MediatorProfile {
        profile
            .clone()
            .unwrap_or_else(|| MediatorProfile::survival_and_birth(self.scm.horizon()))
    }

    fn outcome(&self, req: &EstimandRequest, seed: u64) -> Result<Outcome> {
        let n = self.scenario.mc.n_truth;
        let pairing = self.scenario.settings.pairing;
        let contrast = match req {
            EstimandRequest::Cte => cte_contrast(),
            EstimandRequest::Csde { policy } => {
                csde_contrast(EstimandKind::Csde, &self.policy(policy, seed, false)?)?
            }
            EstimandRequest::Cde { profile } => cde_contrast(&self.profile(profile)),
            EstimandRequest::NdeMarginal { a_ref } => csde_contrast(
                EstimandKind::NdeMarginal,
                &self.derive(*a_ref, seed, false, false)?,
            )?,
            EstimandRequest::NdeConditional { a_ref } => {
                nde_conditional_contrast(&self.derive(*a_ref, seed, false, true)?, *a_ref)
            }
            _ => return self.estimate(req, seed),
        };
        Ok(Outcome::Report(run_contrast(
            &self.scm, &contrast, n, seed, pairing,
        )?))
    }

    fn estimate(&self, req: &EstimandRequest, seed: u64) -> Result<Outcome> {
        let spec = self.scenario.spec();
        let opts = self.estimator_options(seed);
        Ok(match req {
            EstimandRequest::EstimateCte { adjustment } => Outcome::Report(estimate_cte(
                self.data()?,
                adjustment.as_ref().unwrap_or(&self.strata),
                &opts,
            )?),
            EstimandRequest::EstimateCsdeGcomp {
                policy,
                structure,
                drop_covariates,
            } => {
                let data = self.data()?;
                let policy = self.policy(policy, seed, false)?;
                let structure = resolve_structure(spec, structure.as_ref(), drop_covariates)?;
                Outcome::Report(estimate_csde_gcomp(data, &policy, &structure, &opts)?)
            }
            EstimandRequest::EstimateCsdeIpw {
                policy,
                structure,
                drop_covariates,
            } => {
                let data = self.data()?;
                let policy = self.policy(policy, seed, false)?;
                let structure = resolve_structure(spec, structure.as_ref(), drop_covariates)?;
                Outcome::Report(estimate_csde_ipw(data, &policy, &structure, &opts)?)
            }
            EstimandRequest::Positivity { policy, epsilon } => {
                let data = self.data()?;
                let policy = self.policy(policy, seed, false)?;
                let eps = epsilon.unwrap_or(self.scenario.settings.epsilon);
                Outcome::Positivity(positivity_diagnostics(data, &policy, eps)?)
            }
            _ => {
                return Err(Error::Config(format!(
                    "{} is not an estimation request",
                    req.label()
                )))
            }
        })
    }

    /// Enumeration-exact value of what `req` targets.
    fn exact(&self, req: &EstimandRequest, seed: u64) -> Result<Option<EstimandReport>> {
        let contrast = match req {
            EstimandRequest::Cte | EstimandRequest::EstimateCte { .. } => cte_contrast(),
            EstimandRequest::Csde { policy }
            | EstimandRequest::EstimateCsdeGcomp { policy, .. }
            | EstimandRequest::EstimateCsdeIpw { policy, .. } => {
                csde_contrast(EstimandKind::Csde, &self.policy(policy, seed, true)?)?
            }
            EstimandRequest::Cde { profile } => cde_contrast(&self.profile(profile)),
            EstimandRequest::NdeMarginal { a_ref } => csde_contrast(
                EstimandKind::NdeMarginal,
                &self.derive(*a_ref, seed, true, false)?,
            )?,
            EstimandRequest::NdeConditional { a_ref } => {
                nde_conditional_contrast(&self.derive(*a_ref, seed, true, true)?, *a_ref)
            }
            EstimandRequest::Positivity { .. } => return Ok(None),
        };
        exact_contrast(&self.scm, &contrast).map(Some)
    }
}

enum Outcome {
    Report(EstimandReport),
    Positivity(crate::estimators::PositivityReport),
}

fn provenance(scenario: &Scenario) -> ProvenanceBlock {
    let spec_json = serde_json::to_vec(scenario.spec()).expect("spec serializes");
    ProvenanceBlock {
        engine: env!("CARGO_PKG_NAME").to_string(),
        engine_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: scenario.seed,
        scenario_digest: scenario.digest(),
        spec_digest: {
            use sha2::{Digest, Sha256};
            hex::encode(Sha256::digest(spec_json))
        },
        enumeration_eligible: scenario.enumeration_eligible(),
    }
}

/// Seed owned by request `index`.
pub fn request_seed(scenario_seed: u64, index: usize) -> u64 {
    derive_seed(scenario_seed, tags::ESTIMAND, index as u64)
}

fn execute(
    scenario: &Scenario,
    keep: impl Fn(&EstimandRequest) -> Option<EstimandRequest>,
) -> Result<RunReport> {
    let ctx = Context::new(scenario)?;
    let mut results = Vec::new();
    for (index, req) in scenario.estimands.iter().enumerate() {
        let Some(req) = keep(req) else {
            continue;
        };
        let seed = request_seed(scenario.seed, index);
        let mut result = RunResult {
            index,
            request: req.clone(),
            seed,
            status: RunStatus::Ok,
            report: None,
            positivity: None,
            error: None,
        };
        match ctx.outcome(&req, seed) {
            Ok(Outcome::Report(r)) => result.report = Some(r),
            Ok(Outcome::Positivity(p)) => result.positivity = Some(p),
            Err(e) => {
                result.status = RunStatus::Error;
                result.error = Some(ErrorEntry::from(&e));
            }
        }
        results.push(result);
    }
    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        scenario: scenario.name.clone(),
        provenance: provenance(scenario),
        results,
    })
}

/// Run every request. A failing request is recorded in its result and the
/// remaining requests still run.
pub fn run_scenario(scenario: &Scenario) -> Result<RunReport> {
    execute(scenario, |r| Some(r.clone()))
}

/// Positivity checks only: explicit positivity requests, plus one for the
/// policy of every estimator request.
pub fn run_diagnostics(scenario: &Scenario) -> Result<RunReport> {
    execute(scenario, |r| match r {
        EstimandRequest::Positivity { .. } => Some(r.clone()),
        EstimandRequest::EstimateCsdeGcomp { policy, .. }
        | EstimandRequest::EstimateCsdeIpw { policy, .. } => Some(EstimandRequest::Positivity {
            policy: policy.clone(),
            epsilon: None,
        }),
        _ => None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub index: usize,
    pub request: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimand: Option<EstimandKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub denom_arm1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub denom_arm0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorEntry>,
}

/// Exact values for every request of an enumerable scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSidecar {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub spec_digest: String,
    pub entries: Vec<OracleEntry>,
}

impl OracleSidecar {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("sidecar serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn entry(&self, index: usize) -> Option<&OracleEntry> {
        self.entries.iter().find(|e| e.index == index)
    }
}

/// Enumerate the truth behind every request. Data-adaptive policies are fit
/// on the same observational data a run with this seed would use.
pub fn oracle_sidecar(scenario: &Scenario) -> Result<OracleSidecar> {
    if !scenario.enumeration_eligible() {
        return Err(Error::Unsupported(format!(
            "scenario {} is not eligible for exact enumeration",
            scenario.name
        )));
    }
    let ctx = Context::new(scenario)?;
    let entries = scenario
        .estimands
        .iter()
        .enumerate()
        .map(|(index, req)| {
            let mut entry = OracleEntry {
                index,
                request: req.label().to_string(),
                estimand: None,
                value: None,
                denom_arm1: None,
                denom_arm0: None,
                error: None,
            };
            match ctx.exact(req, request_seed(scenario.seed, index)) {
                Ok(Some(r)) => {
                    entry.estimand = Some(r.estimand);
                    entry.value = Some(r.value);
                    entry.denom_arm1 = Some(r.arm1.denominator);
                    entry.denom_arm0 = Some(r.arm0.denominator);
                }
                Ok(None) => {}
                Err(e) => entry.error = Some(ErrorEntry::from(&e)),
            }
            entry
        })
        .collect();
    Ok(OracleSidecar {
        schema_version: SCHEMA_VERSION,
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        spec_digest: provenance(scenario).spec_digest,
        entries,
    })
}
