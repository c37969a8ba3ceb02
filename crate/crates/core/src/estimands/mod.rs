//! Monte Carlo ground truth for the causal contrasts.
//!
//! Every contrast has the form
//! `P[Y(arm1) = 1] / P[Z2_tau(arm1) = 1] - P[Y(arm0) = 1] / P[Z2_tau(arm0) = 1]`.
//! Since `Y = 1` implies `Z2_tau = 1`, each ratio is also the probability of
//! the outcome among counterfactual births.

pub mod oracle;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervention::derive::{derive_compiled, PolicyFit};
use crate::intervention::plan::digest_plans;
use crate::intervention::{
    InterventionPlan, MediatorPlan, MediatorPolicy, MediatorProfile, PreparedPlan, Stratification,
};
use crate::rng::{derive_seed, tags};
use crate::scm::compiled::CompiledScm;
use crate::scm::engine::{paired_counts, PairedCounts};
use crate::scm::spec::ScmSpec;

/// Tolerance for the internal ratio-form versus conditional-form check.
pub const FORM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimandKind {
    #[serde(rename = "CTE")]
    Cte,
    #[serde(rename = "CSDE")]
    Csde,
    #[serde(rename = "CDE")]
    Cde,
    #[serde(rename = "NDE_MARGINAL")]
    NdeMarginal,
    #[serde(rename = "NDE_CONDITIONAL")]
    NdeConditional,
}

impl EstimandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimandKind::Cte => "CTE",
            EstimandKind::Csde => "CSDE",
            EstimandKind::Cde => "CDE",
            EstimandKind::NdeMarginal => "NDE_MARGINAL",
            EstimandKind::NdeConditional => "NDE_CONDITIONAL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MonteCarloTruth,
    /// Exhaustive enumeration; no Monte Carlo error.
    Exact,
    GFormula,
    GComputation,
    Ipw,
}

/// How the two arms' exogenous noise is coupled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Both arms reuse every uniform of individual `i`.
    #[default]
    CommonRandomNumbers,
    /// Each arm draws from its own derived seed.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmDetail {
    /// Exposure assigned in this arm.
    pub exposure: u8,
    /// `P(Y = 1)`.
    pub numerator: f64,
    /// `P(Z2_tau = 1)`.
    pub denominator: f64,
    /// `P(Y = 1 | Z2_tau = 1)`.
    pub conditional: f64,
    /// Individuals simulated, or observed rows in the arm.
    pub n: u64,
    /// Individuals (or weighted mass) with `Y = 1`.
    pub outcome_count: f64,
    /// Individuals (or weighted mass) with `Z2_tau = 1`.
    pub birth_count: f64,
}

impl ArmDetail {
    pub fn ratio(&self) -> f64 {
        self.numerator / self.denominator
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandReport {
    pub estimand: EstimandKind,
    pub method: Method,
    pub value: f64,
    pub mc_se: f64,
    /// The same contrast computed from conditional frequencies among births.
    pub conditional_form: f64,
    pub arm1: ArmDetail,
    pub arm0: ArmDetail,
    pub n_sim: u64,
    pub seed: u64,
    /// How Monte Carlo arms were coupled; absent for estimators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairing: Option<Pairing>,
    pub plan_digest: String,
    /// Named counters: policy fallbacks, truncated weights, bootstrap size.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub diagnostics: BTreeMap<String, f64>,
}

/// Options shared by the Monte Carlo estimands.
#[derive(Debug, Clone, Default)]
pub struct TruthOptions {
    pub pairing: Pairing,
    /// How counterfactual policies are derived; defaults to exact when
    /// possible, otherwise `n` simulated individuals.
    pub policy_fit: Option<PolicyFit>,
    /// Baseline strata for derived policies; defaults to every discrete
    /// baseline covariate.
    pub strata: Option<Stratification>,
}

/// The two plans of a contrast.
#[derive(Debug, Clone)]
pub(crate) struct Contrast {
    pub kind: EstimandKind,
    pub arm1: InterventionPlan,
    pub arm0: InterventionPlan,
}

impl Contrast {
    pub fn digest(&self) -> String {
        digest_plans(&[self.arm1.clone(), self.arm0.clone()])
    }

    fn exposures(&self) -> (u8, u8) {
        let e = |p: &InterventionPlan| p.exposure.value().unwrap_or(0);
        (e(&self.arm1), e(&self.arm0))
    }
}

pub(crate) fn cte_contrast() -> Contrast {
    Contrast {
        kind: EstimandKind::Cte,
        arm1: InterventionPlan::set_exposure(1),
        arm0: InterventionPlan::set_exposure(0),
    }
}

pub(crate) fn csde_contrast(kind: EstimandKind, policy: &MediatorPolicy) -> Result<Contrast> {
    if policy.kind.conditions_on_covariates() {
        return Err(Error::InvalidPolicy(
            "a stochastic direct effect needs a policy that depends only on baseline and mediator history".into(),
        ));
    }
    let m = MediatorPlan::Stochastic(policy.clone());
    Ok(Contrast {
        kind,
        arm1: InterventionPlan::set_exposure(1).with_mediator(m.clone()),
        arm0: InterventionPlan::set_exposure(0).with_mediator(m),
    })
}

pub(crate) fn cde_contrast(profile: &MediatorProfile) -> Contrast {
    let m = MediatorPlan::Controlled(profile.clone());
    Contrast {
        kind: EstimandKind::Cde,
        arm1: InterventionPlan::set_exposure(1).with_mediator(m.clone()),
        arm0: InterventionPlan::set_exposure(0).with_mediator(m),
    }
}

pub(crate) fn nde_conditional_contrast(policy: &MediatorPolicy, a_ref: u8) -> Contrast {
    Contrast {
        kind: EstimandKind::NdeConditional,
        arm1: InterventionPlan::set_exposure(1)
            .with_mediator(MediatorPlan::Stochastic(policy.clone())),
        arm0: InterventionPlan::set_exposure(a_ref),
    }
}

fn policy_fit(opts: &TruthOptions, n: u64) -> PolicyFit {
    opts.policy_fit.unwrap_or(PolicyFit::auto(n))
}

fn strata(opts: &TruthOptions, scm: &CompiledScm) -> Stratification {
    opts.strata
        .clone()
        .unwrap_or_else(|| Stratification::discrete_baseline(&scm.layout))
}

/// Simulate both arms of a contrast and summarize.
pub(crate) fn run_contrast(
    scm: &CompiledScm,
    contrast: &Contrast,
    n: u64,
    seed: u64,
    pairing: Pairing,
) -> Result<EstimandReport> {
    if n < 2 {
        return Err(Error::Config(
            "need at least 2 simulated individuals".into(),
        ));
    }
    let p1 = PreparedPlan::new(&contrast.arm1, scm)?;
    let p0 = PreparedPlan::new(&contrast.arm0, scm)?;
    let (s1, s0) = match pairing {
        Pairing::CommonRandomNumbers => (seed, seed),
        Pairing::Independent => (
            derive_seed(seed, tags::ARM, 1),
            derive_seed(seed, tags::ARM, 0),
        ),
    };
    let counts = paired_counts(&p1.regime(scm), &p0.regime(scm), n, s1, s0)?;
    let mut report = report_from_counts(contrast, &counts, seed, pairing)?;
    report.plan_digest = contrast.digest();
    Ok(report)
}

fn report_from_counts(
    contrast: &Contrast,
    counts: &PairedCounts,
    seed: u64,
    pairing: Pairing,
) -> Result<EstimandReport> {
    let n = counts.n;
    let mut y = [0u64; 2];
    let mut d = [0u64; 2];
    for (idx, &c) in counts.patterns.iter().enumerate() {
        y[0] += c * (idx & 1) as u64;
        d[0] += c * ((idx >> 1) & 1) as u64;
        y[1] += c * ((idx >> 2) & 1) as u64;
        d[1] += c * ((idx >> 3) & 1) as u64;
    }
    // y[0], d[0] belong to arm 1.
    for (k, label) in ["arm1", "arm0"].iter().enumerate() {
        if d[k] == 0 {
            return Err(Error::UndefinedEstimand {
                arm: format!("{label} of {}", contrast.kind.as_str()),
            });
        }
    }
    let nf = n as f64;
    let (e1, e0) = contrast.exposures();
    let arm = |k: usize, exposure: u8| ArmDetail {
        exposure,
        numerator: y[k] as f64 / nf,
        denominator: d[k] as f64 / nf,
        conditional: y[k] as f64 / d[k] as f64,
        n,
        outcome_count: y[k] as f64,
        birth_count: d[k] as f64,
    };
    let (arm1, arm0) = (arm(0, e1), arm(1, e0));
    let value = arm1.ratio() - arm0.ratio();
    let conditional_form = arm1.conditional - arm0.conditional;
    check_forms(value, conditional_form)?;

    // Influence function of the ratio contrast, evaluated per pattern.
    let (r1, r0) = (arm1.ratio(), arm0.ratio());
    let (m1, m0) = (arm1.denominator, arm0.denominator);
    let mut ss = 0.0;
    for (idx, &c) in counts.patterns.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let bit = |s: usize| ((idx >> s) & 1) as f64;
        let psi = (bit(0) - r1 * bit(1)) / m1 - (bit(2) - r0 * bit(3)) / m0;
        ss += c as f64 * psi * psi;
    }
    let mc_se = (ss / (nf - 1.0) / nf).sqrt();

    let mut diagnostics = BTreeMap::new();
    for (k, s) in counts.stats.iter().enumerate() {
        if s.policy_fallbacks > 0 {
            diagnostics.insert(
                format!("policy_fallbacks_arm{}", 1 - k),
                s.policy_fallbacks as f64,
            );
        }
    }
    Ok(EstimandReport {
        estimand: contrast.kind,
        method: Method::MonteCarloTruth,
        value,
        mc_se,
        conditional_form,
        arm1,
        arm0,
        n_sim: n,
        seed,
        pairing: Some(pairing),
        plan_digest: String::new(),
        diagnostics,
    })
}

pub(crate) fn check_forms(value: f64, conditional_form: f64) -> Result<()> {
    if (value - conditional_form).abs() > FORM_TOLERANCE {
        return Err(Error::Config(format!(
            "ratio form {value} and conditional form {conditional_form} disagree"
        )));
    }
    Ok(())
}

/// CTE: `do(A = 1)` against `do(A = 0)` with natural mediators.
pub fn conditional_total_effect(spec: &ScmSpec, n: u64, seed: u64) -> Result<EstimandReport> {
    let scm = CompiledScm::new(spec)?;
    run_contrast(&scm, &cte_contrast(), n, seed, Pairing::CommonRandomNumbers)
}

/// CSDE: both arms draw mediators from `policy`.
pub fn conditional_stochastic_direct_effect(
    spec: &ScmSpec,
    policy: &MediatorPolicy,
    n: u64,
    seed: u64,
) -> Result<EstimandReport> {
    csde_with(spec, policy, n, seed, Pairing::CommonRandomNumbers)
}

pub fn csde_with(
    spec: &ScmSpec,
    policy: &MediatorPolicy,
    n: u64,
    seed: u64,
    pairing: Pairing,
) -> Result<EstimandReport> {
    let scm = CompiledScm::new(spec)?;
    run_contrast(
        &scm,
        &csde_contrast(EstimandKind::Csde, policy)?,
        n,
        seed,
        pairing,
    )
}

/// CDE: both arms have mediators fixed to `profile`.
pub fn controlled_direct_effect(
    spec: &ScmSpec,
    profile: &MediatorProfile,
    n: u64,
    seed: u64,
) -> Result<EstimandReport> {
    let scm = CompiledScm::new(spec)?;
    run_contrast(
        &scm,
        &cde_contrast(profile),
        n,
        seed,
        Pairing::CommonRandomNumbers,
    )
}

/// Natural direct effect with the counterfactual mediator law under
/// `do(A = a_ref)` given baseline.
pub fn nde_marginal(spec: &ScmSpec, a_ref: u8, n: u64, seed: u64) -> Result<EstimandReport> {
    nde_marginal_with(spec, a_ref, n, seed, &TruthOptions::default())
}

pub fn nde_marginal_with(
    spec: &ScmSpec,
    a_ref: u8,
    n: u64,
    seed: u64,
    opts: &TruthOptions,
) -> Result<EstimandReport> {
    let scm = CompiledScm::new(spec)?;
    let policy = derive_compiled(
        &scm,
        a_ref,
        policy_fit(opts, n),
        derive_seed(seed, tags::POLICY_FIT, 0),
        &strata(opts, &scm),
        false,
    )?;
    run_contrast(
        &scm,
        &csde_contrast(EstimandKind::NdeMarginal, &policy)?,
        n,
        seed,
        opts.pairing,
    )
}

/// Natural direct effect with mediators drawn from the history-conditional
/// counterfactual law under `do(A = a_ref)` in the exposed arm, contrasted
/// with the natural `do(A = a_ref)` arm.
pub fn nde_conditional(spec: &ScmSpec, a_ref: u8, n: u64, seed: u64) -> Result<EstimandReport> {
    nde_conditional_with(spec, a_ref, n, seed, &TruthOptions::default())
}

pub fn nde_conditional_with(
    spec: &ScmSpec,
    a_ref: u8,
    n: u64,
    seed: u64,
    opts: &TruthOptions,
) -> Result<EstimandReport> {
    let scm = CompiledScm::new(spec)?;
    let policy = derive_compiled(
        &scm,
        a_ref,
        policy_fit(opts, n),
        derive_seed(seed, tags::POLICY_FIT, 0),
        &strata(opts, &scm),
        true,
    )?;
    run_contrast(
        &scm,
        &nde_conditional_contrast(&policy, a_ref),
        n,
        seed,
        opts.pairing,
    )
}
