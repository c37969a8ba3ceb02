//! Declarative scenario files and batch runs.

mod report;
mod run;

pub use report::{
    emit_report, write_csv, ErrorEntry, OutputFormat, ProvenanceBlock, RunReport, RunResult,
    RunStatus,
};
pub use run::{
    oracle_sidecar, request_seed, run_diagnostics, run_scenario, OracleEntry, OracleSidecar,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimands::Pairing;
use crate::estimators::{Integration, ModelStructure};
use crate::intervention::{FitMethod, MediatorPolicy, MediatorProfile, Stratification};
use crate::scm::spec::ScmSpec;
use crate::scm::{enumeration_eligible, validate_scm};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSettings {
    /// Individuals per arm for Monte Carlo truth.
    pub n_truth: u64,
    /// Individuals for Monte Carlo policy derivation.
    pub n_policy_fit: u64,
    /// Rows of observational data for the estimators.
    pub n_observational: u64,
    pub bootstrap_replicates: usize,
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings {
            n_truth: 100_000,
            n_policy_fit: 100_000,
            n_observational: 50_000,
            bootstrap_replicates: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Settings {
    pub pairing: Pairing,
    pub policy_fit: FitMethod,
    /// Baseline strata for derived policies and adjustment; defaults to every
    /// discrete baseline covariate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strata: Option<Stratification>,
    pub integration: Integration,
    pub weight_cap: f64,
    /// Positivity flag threshold.
    pub epsilon: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            pairing: Pairing::CommonRandomNumbers,
            policy_fit: FitMethod::Auto,
            strata: None,
            integration: Integration::Auto,
            weight_cap: 50.0,
            epsilon: 0.05,
        }
    }
}

/// Where a mediator policy comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySource {
    /// Counterfactual mediator law under `do(A = a_ref)` given baseline.
    Marginal {
        #[serde(default)]
        a_ref: u8,
    },
    /// Empirical mediator law of one arm of the observational data.
    DataAdaptive {
        #[serde(default)]
        source_arm: u8,
    },
    /// Per-time hazards shared by everyone.
    Hazards {
        death: Vec<f64>,
        birth: Vec<f64>,
    },
    Inline {
        policy: MediatorPolicy,
    },
    /// Path relative to the scenario file; replaced by `inline` on load.
    File {
        path: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimandRequest {
    Cte,
    Csde {
        policy: PolicySource,
    },
    Cde {
        /// Defaults to survival with birth at t = 1.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        profile: Option<MediatorProfile>,
    },
    NdeMarginal {
        #[serde(default)]
        a_ref: u8,
    },
    NdeConditional {
        #[serde(default)]
        a_ref: u8,
    },
    EstimateCte {
        /// Defaults to the scenario strata; `{"variables": []}` is unadjusted.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        adjustment: Option<Stratification>,
    },
    EstimateCsdeGcomp {
        policy: PolicySource,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        structure: Option<ModelStructure>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        drop_covariates: Vec<String>,
    },
    EstimateCsdeIpw {
        policy: PolicySource,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        structure: Option<ModelStructure>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        drop_covariates: Vec<String>,
    },
    Positivity {
        policy: PolicySource,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epsilon: Option<f64>,
    },
}

/// Nuisance models: the generating structure unless given, minus any
/// dropped covariates.
pub fn resolve_structure(
    spec: &ScmSpec,
    structure: Option<&ModelStructure>,
    drop_covariates: &[String],
) -> Result<ModelStructure> {
    let mut s = match structure {
        Some(s) => s.clone(),
        None => ModelStructure::from_spec(spec)?,
    };
    for name in drop_covariates {
        s = s.without_covariate(name);
    }
    Ok(s)
}

impl EstimandRequest {
    pub fn label(&self) -> &'static str {
        match self {
            EstimandRequest::Cte => "cte",
            EstimandRequest::Csde { .. } => "csde",
            EstimandRequest::Cde { .. } => "cde",
            EstimandRequest::NdeMarginal { .. } => "nde_marginal",
            EstimandRequest::NdeConditional { .. } => "nde_conditional",
            EstimandRequest::EstimateCte { .. } => "estimate_cte",
            EstimandRequest::EstimateCsdeGcomp { .. } => "estimate_csde_gcomp",
            EstimandRequest::EstimateCsdeIpw { .. } => "estimate_csde_ipw",
            EstimandRequest::Positivity { .. } => "positivity",
        }
    }

    pub fn policy(&self) -> Option<&PolicySource> {
        match self {
            EstimandRequest::Csde { policy }
            | EstimandRequest::EstimateCsdeGcomp { policy, .. }
            | EstimandRequest::EstimateCsdeIpw { policy, .. }
            | EstimandRequest::Positivity { policy, .. } => Some(policy),
            _ => None,
        }
    }

    fn policy_mut(&mut self) -> Option<&mut PolicySource> {
        match self {
            EstimandRequest::Csde { policy }
            | EstimandRequest::EstimateCsdeGcomp { policy, .. }
            | EstimandRequest::EstimateCsdeIpw { policy, .. }
            | EstimandRequest::Positivity { policy, .. } => Some(policy),
            _ => None,
        }
    }

    /// Needs the observational dataset.
    pub fn uses_data(&self) -> bool {
        matches!(
            self,
            EstimandRequest::EstimateCte { .. }
                | EstimandRequest::EstimateCsdeGcomp { .. }
                | EstimandRequest::EstimateCsdeIpw { .. }
                | EstimandRequest::Positivity { .. }
        ) || matches!(self.policy(), Some(PolicySource::DataAdaptive { .. }))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSettings {
    pub format: OutputFormat,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

/// A scenario document. After [`load_scenario`] the model is always inline
/// and policy files have been read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scm: Option<ScmSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scm_file: Option<String>,
    pub seed: u64,
    #[serde(default)]
    pub mc: McSettings,
    #[serde(default)]
    pub settings: Settings,
    pub estimands: Vec<EstimandRequest>,
    #[serde(default)]
    pub output: OutputSettings,
}

impl Scenario {
    pub fn spec(&self) -> &ScmSpec {
        self.scm
            .as_ref()
            .expect("scenario model is resolved on load")
    }

    /// Every exogenous configuration can be enumerated.
    pub fn enumeration_eligible(&self) -> bool {
        enumeration_eligible(self.spec())
    }

    /// Hex sha256 of the resolved scenario content.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(
            serde_json::to_vec(self).expect("scenario serializes"),
        ))
    }

    pub fn strata(&self) -> Result<Stratification> {
        Ok(match &self.settings.strata {
            Some(s) => s.clone(),
            None => {
                let layout = crate::scm::layout::Layout::new(
                    &crate::scm::layout::Schema::from_spec(self.spec()),
                )?;
                Stratification::discrete_baseline(&layout)
            }
        })
    }

    /// Parse and resolve a scenario from text; relative paths resolve
    /// against `base`.
    pub fn from_json(text: &str, origin: &str, base: &Path) -> Result<Self> {
        let mut scenario: Scenario = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        scenario.resolve(origin, base)?;
        scenario.validate(origin)?;
        Ok(scenario)
    }

    fn resolve(&mut self, origin: &str, base: &Path) -> Result<()> {
        match (&self.scm, &self.scm_file) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(format!(
                    "{origin}: give either scm or scm_file, not both"
                )))
            }
            (None, None) => {
                return Err(Error::Config(format!("{origin}: missing scm or scm_file")))
            }
            (None, Some(file)) => {
                let path = base.join(file);
                let text = std::fs::read_to_string(&path)?;
                let spec: ScmSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    line: e.line(),
                    column: e.column(),
                    message: e.to_string(),
                })?;
                self.scm = Some(spec);
            }
            (Some(_), None) => {}
        }
        for (i, req) in self.estimands.iter_mut().enumerate() {
            if let Some(source) = req.policy_mut() {
                if let PolicySource::File { path } = source {
                    let full = base.join(&*path);
                    let text = std::fs::read_to_string(&full)?;
                    let policy = MediatorPolicy::from_json(&text).map_err(|e| {
                        Error::Config(format!("{origin}: estimands[{i}].policy: {e}"))
                    })?;
                    *source = PolicySource::Inline { policy };
                }
            }
        }
        Ok(())
    }

    fn validate(&self, origin: &str) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "{origin}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let spec = self.spec();
        let scm_path = match &self.scm_file {
            Some(f) => f.clone(),
            None => format!("{origin}: scm"),
        };
        let report = validate_scm(spec);
        if !report.is_ok() {
            return Err(Error::InvalidSpec(report.prefixed(&scm_path)));
        }
        let mut problems = Vec::new();
        let mc = &self.mc;
        for (name, v) in [
            ("n_truth", mc.n_truth),
            ("n_policy_fit", mc.n_policy_fit),
            ("n_observational", mc.n_observational),
        ] {
            if v < 2 {
                problems.push(format!("mc.{name} must be at least 2"));
            }
        }
        if mc.bootstrap_replicates < 2 {
            problems.push("mc.bootstrap_replicates must be at least 2".into());
        }
        let s = &self.settings;
        if !(s.weight_cap > 0.0) {
            problems.push("settings.weight_cap must be positive".into());
        }
        if !(s.epsilon > 0.0 && s.epsilon < 1.0) {
            problems.push("settings.epsilon must lie in (0, 1)".into());
        }
        if self.estimands.is_empty() {
            problems.push("estimands is empty".into());
        }
        for (i, req) in self.estimands.iter().enumerate() {
            let at = format!("estimands[{i}]");
            let arm = |name: &str, v: u8, problems: &mut Vec<String>| {
                if v > 1 {
                    problems.push(format!("{at}.{name} must be 0 or 1, got {v}"));
                }
            };
            match req {
                EstimandRequest::NdeMarginal { a_ref }
                | EstimandRequest::NdeConditional { a_ref } => arm("a_ref", *a_ref, &mut problems),
                EstimandRequest::Cde { profile: Some(p) } => {
                    if let Err(e) = p.validate(spec.horizon, spec.death_blocks_birth) {
                        problems.push(format!("{at}.profile: {e}"));
                    }
                }
                EstimandRequest::Positivity {
                    epsilon: Some(e), ..
                } if !(*e > 0.0 && *e < 1.0) => {
                    problems.push(format!("{at}.epsilon must lie in (0, 1)"));
                }
                _ => {}
            }
            match req.policy() {
                Some(PolicySource::Marginal { a_ref }) => {
                    arm("policy.a_ref", *a_ref, &mut problems)
                }
                Some(PolicySource::DataAdaptive { source_arm }) => {
                    arm("policy.source_arm", *source_arm, &mut problems)
                }
                Some(PolicySource::Hazards { death, birth }) => {
                    if death.len() != spec.horizon || birth.len() != spec.horizon {
                        problems.push(format!(
                            "{at}.policy: need {} death and birth hazards",
                            spec.horizon
                        ));
                    }
                }
                _ => {}
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("{origin}: {}", problems.join("; "))))
        }
    }
}

/// Read, resolve and validate a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(PathBuf::new);
    Scenario::from_json(&text, &path.display().to_string(), &base)
}
