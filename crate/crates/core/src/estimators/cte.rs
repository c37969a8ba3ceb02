//! Baseline-adjusted total effect by standardization over strata.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::estimands::{cte_contrast, EstimandKind, EstimandReport, Method};
use crate::estimators::bootstrap::bootstrap;
use crate::estimators::data::ObservedDataset;
use crate::estimators::{estimator_report, ArmMeans, EstimatorOptions, ReportParts};
use crate::intervention::policy::{ResolvedStrata, Stratification};

/// Standardize arm-specific means of `Y` and `Z2_tau` over the empirical
/// distribution of `adjustment` strata. An empty stratification gives the
/// unadjusted contrast.
pub fn estimate_cte(
    data: &ObservedDataset,
    adjustment: &Stratification,
    opts: &EstimatorOptions,
) -> Result<EstimandReport> {
    let strata = adjustment.resolve(data.layout())?;
    let point = cte_means(data, data.counts(), &strata)?;
    let boot = bootstrap(data, opts.bootstrap_replicates, opts.seed, |w| {
        cte_means(data, w, &strata)?.value()
    })?;
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("strata".into(), strata.count as f64);
    estimator_report(
        data,
        ReportParts {
            kind: EstimandKind::Cte,
            method: Method::GFormula,
            plan_digest: cte_contrast().digest(),
            diagnostics,
        },
        &point,
        boot,
        opts.seed,
    )
}

fn cte_means(data: &ObservedDataset, weights: &[f64], strata: &ResolvedStrata) -> Result<ArmMeans> {
    let layout = data.layout();
    let (y, d) = (layout.composite, layout.slice(layout.horizon()).birth);
    // per stratum and arm: weight, outcome mass, birth mass
    let mut cells = vec![[[0.0f64; 3]; 2]; strata.count];
    for (state, &w) in data.patterns().iter().zip(weights) {
        if w <= 0.0 {
            continue;
        }
        let c = &mut cells[strata.index(state) as usize][state[layout.exposure] as usize];
        c[0] += w;
        if state[y] == 1.0 {
            c[1] += w;
        }
        if state[d] == 1.0 {
            c[2] += w;
        }
    }
    let total: f64 = cells.iter().map(|c| c[0][0] + c[1][0]).sum();
    let mut empty = Vec::new();
    let mut means = ArmMeans::default();
    for (s, c) in cells.iter().enumerate() {
        let ws = c[0][0] + c[1][0];
        if ws <= 0.0 {
            continue;
        }
        for a in 0..2 {
            if c[a][0] <= 0.0 {
                empty.push(format!(
                    "{} has no rows with a={a}",
                    strata.describe(layout, s as u32)
                ));
                continue;
            }
            means.num[a] += ws / total * c[a][1] / c[a][0];
            means.den[a] += ws / total * c[a][2] / c[a][0];
        }
    }
    if !empty.is_empty() {
        return Err(Error::Positivity { strata: empty });
    }
    Ok(means)
}
