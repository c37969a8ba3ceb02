//! Parametric g-computation of the stochastic direct effect.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimands::{csde_contrast, EstimandKind, EstimandReport, Method};
use crate::estimators::bootstrap::bootstrap;
use crate::estimators::data::ObservedDataset;
use crate::estimators::models::{fit_models, ModelStructure};
use crate::estimators::positivity::{baseline_policy, require_mediator_support};
use crate::estimators::{estimator_report, ArmMeans, EstimatorOptions, Integration, ReportParts};
use crate::intervention::policy::{CompiledPolicy, MediatorPolicy};
use crate::numeric::NeumaierSum;
use crate::rng::{derive_seed, tags, NoiseSource};
use crate::scm::compiled::CompiledScm;
use crate::scm::engine::{DrawStats, MediatorMode, Regime, ENUMERATION_BUDGET};

const CHUNK: u64 = 2048;

/// Fit the outcome and mediator models within each exposure arm, then
/// standardize over the empirical baseline distribution with mediators
/// drawn from `policy`.
pub fn estimate_csde_gcomp(
    data: &ObservedDataset,
    policy: &MediatorPolicy,
    structure: &ModelStructure,
    opts: &EstimatorOptions,
) -> Result<EstimandReport> {
    let policy = baseline_policy(policy)?;
    let contrast = csde_contrast(EstimandKind::Csde, policy)?;
    let mut exact_used = true;
    let point = gcomp_means(
        data,
        data.counts(),
        policy,
        structure,
        opts,
        &mut exact_used,
    )?;
    let boot = bootstrap(data, opts.bootstrap_replicates, opts.seed, |w| {
        gcomp_means(data, w, policy, structure, opts, &mut true)?.value()
    })?;
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert(
        "exact_integration".into(),
        if exact_used { 1.0 } else { 0.0 },
    );
    estimator_report(
        data,
        ReportParts {
            kind: EstimandKind::Csde,
            method: Method::GComputation,
            plan_digest: contrast.digest(),
            diagnostics,
        },
        &point,
        boot,
        opts.seed,
    )
}

/// Distinct baseline vectors with their weights.
fn baseline_patterns(data: &ObservedDataset, weights: &[f64]) -> Vec<(Vec<f64>, f64)> {
    let layout = data.layout();
    let mut out: BTreeMap<Vec<u64>, (Vec<f64>, f64)> = BTreeMap::new();
    for (state, &w) in data.patterns().iter().zip(weights) {
        if w > 0.0 {
            let l0 = state[layout.baseline.clone()].to_vec();
            let key = l0.iter().map(|v| v.to_bits()).collect();
            out.entry(key).or_insert_with(|| (l0, 0.0)).1 += w;
        }
    }
    out.into_values().collect()
}

fn gcomp_means(
    data: &ObservedDataset,
    weights: &[f64],
    policy: &MediatorPolicy,
    structure: &ModelStructure,
    opts: &EstimatorOptions,
    exact_used: &mut bool,
) -> Result<ArmMeans> {
    require_mediator_support(data, weights, policy)?;
    let models = fit_models(data, weights, structure)?;
    let baselines = baseline_patterns(data, weights);
    let total: f64 = baselines.iter().map(|b| b.1).sum();
    let mut means = ArmMeans::default();
    for a in 0..2u8 {
        let scm = &models.arms[a as usize];
        let compiled = CompiledPolicy::new(policy, scm)?;
        let exact = match opts.integration {
            Integration::Exact => true,
            Integration::MonteCarlo => false,
            Integration::Auto => {
                let regime = arm_regime(scm, a, &compiled, Some(&baselines[0].0));
                regime
                    .configuration_count()
                    .is_ok_and(|c| c.saturating_mul(baselines.len() as u128) <= ENUMERATION_BUDGET)
            }
        };
        *exact_used &= exact;
        let (num, den) = if exact {
            integrate_exact(scm, a, &compiled, &baselines)?
        } else {
            integrate_mc(scm, a, &compiled, &baselines, total, opts)?
        };
        means.num[a as usize] = num / total;
        means.den[a as usize] = den / total;
    }
    Ok(means)
}

fn arm_regime<'a>(
    scm: &'a CompiledScm,
    a: u8,
    policy: &'a CompiledPolicy,
    l0: Option<&'a [f64]>,
) -> Regime<'a> {
    Regime::natural(scm)
        .with_exposure(Some(a))
        .with_mediator(MediatorMode::Policy(policy))
        .with_baseline(l0)
}

/// Weighted `(outcome, birth)` mass, summed over baseline patterns.
fn integrate_exact(
    scm: &CompiledScm,
    a: u8,
    policy: &CompiledPolicy,
    baselines: &[(Vec<f64>, f64)],
) -> Result<(f64, f64)> {
    let layout = &scm.layout;
    let (y, d) = (layout.composite, layout.slice(layout.horizon()).birth);
    let parts = baselines
        .par_iter()
        .map(|(l0, w)| {
            let (mut num, mut den) = (0.0, 0.0);
            arm_regime(scm, a, policy, Some(l0)).enumerate(|state, p| {
                if state[y] == 1.0 {
                    num += p;
                }
                if state[d] == 1.0 {
                    den += p;
                }
            })?;
            Ok((num * w, den * w))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut num, mut den) = (NeumaierSum::default(), NeumaierSum::default());
    for (n, d) in parts {
        num.add(n);
        den.add(d);
    }
    Ok((num.value(), den.value()))
}

/// Draw baselines from their empirical law, then the rest of the trajectory
/// from the fitted model. Returns mass scaled to `total`.
fn integrate_mc(
    scm: &CompiledScm,
    a: u8,
    policy: &CompiledPolicy,
    baselines: &[(Vec<f64>, f64)],
    total: f64,
    opts: &EstimatorOptions,
) -> Result<(f64, f64)> {
    let n = opts.n_integration;
    if n == 0 {
        return Err(Error::Config(
            "monte carlo integration needs n_integration >= 1".into(),
        ));
    }
    let layout = &scm.layout;
    let (y, d) = (layout.composite, layout.slice(layout.horizon()).birth);
    let mut cumulative = Vec::with_capacity(baselines.len());
    let mut acc = 0.0;
    for (_, w) in baselines {
        acc += w / total;
        cumulative.push(acc);
    }
    let pick = NoiseSource::new(derive_seed(opts.seed, tags::INTEGRATION, 0));
    let noise = NoiseSource::new(derive_seed(opts.seed, tags::INTEGRATION, 1));
    let width = layout.len();
    let (ny, nd) = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut uniforms = vec![0.0; width];
            let mut state = vec![0.0; width];
            let mut stats = DrawStats::default();
            let (mut ny, mut nd) = (0u64, 0u64);
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let u = pick.uniform(i, 0);
                let k = cumulative
                    .partition_point(|c| *c <= u)
                    .min(baselines.len() - 1);
                noise.fill(i, &mut uniforms);
                arm_regime(scm, a, policy, Some(&baselines[k].0))
                    .realize(&uniforms, &mut state, &mut stats)?;
                ny += u64::from(state[y] == 1.0);
                nd += u64::from(state[d] == 1.0);
            }
            Ok::<_, Error>((ny, nd))
        })
        .try_reduce(|| (0, 0), |x, y| Ok((x.0 + y.0, x.1 + y.1)))?;
    Ok((ny as f64 / n as f64 * total, nd as f64 / n as f64 * total))
}
