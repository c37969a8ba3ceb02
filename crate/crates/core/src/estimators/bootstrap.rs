//! Nonparametric bootstrap over individuals.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::data::ObservedDataset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct BootstrapSummary {
    pub se: f64,
    pub replicates: usize,
    /// Replicates whose estimate was undefined, e.g. an empty arm.
    pub failures: usize,
}

/// Standard deviation of `statistic` over resampled datasets. Replicate `r`
/// depends only on `(seed, r)`, so the result is schedule-independent.
pub(crate) fn bootstrap<F>(
    data: &ObservedDataset,
    replicates: usize,
    seed: u64,
    statistic: F,
) -> Result<BootstrapSummary>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let values: Vec<Option<f64>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let w = data.bootstrap_weights(seed, r);
            statistic(&w).ok().filter(|v| v.is_finite())
        })
        .collect();
    let ok: Vec<f64> = values.iter().flatten().copied().collect();
    if ok.len() < 2 {
        return Err(Error::Config(format!(
            "only {} of {replicates} bootstrap replicates produced an estimate",
            ok.len()
        )));
    }
    let m = ok.iter().sum::<f64>() / ok.len() as f64;
    let var = ok.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (ok.len() - 1) as f64;
    Ok(BootstrapSummary {
        se: var.sqrt(),
        replicates: ok.len(),
        failures: replicates - ok.len(),
    })
}
