//! Weighted fits of binary nodes on grouped data.

use nalgebra::{DMatrix, DVector};

use crate::numeric::sigmoid;

/// Rows sharing one covariate vector: `(features, weight of 0, weight of 1)`.
pub(crate) type Group = (Vec<f64>, f64, f64);

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-10;
const RIDGE: f64 = 1e-10;

/// Logistic regression by iteratively reweighted least squares. Returns the
/// intercept followed by one coefficient per feature.
pub(crate) fn logistic_irls(groups: &[Group], n_features: usize) -> Vec<f64> {
    let p = n_features + 1;
    let mut beta = DVector::<f64>::zeros(p);
    for _ in 0..MAX_ITER {
        let mut hess = DMatrix::<f64>::zeros(p, p);
        let mut grad = DVector::<f64>::zeros(p);
        for (x, w0, w1) in groups {
            let total = w0 + w1;
            if total <= 0.0 {
                continue;
            }
            let mut eta = beta[0];
            for (k, v) in x.iter().enumerate() {
                eta += beta[k + 1] * v;
            }
            let mu = sigmoid(eta);
            let resid = w1 - total * mu;
            let curv = total * mu * (1.0 - mu);
            for i in 0..p {
                let xi = if i == 0 { 1.0 } else { x[i - 1] };
                grad[i] += xi * resid;
                for j in 0..=i {
                    let xj = if j == 0 { 1.0 } else { x[j - 1] };
                    hess[(i, j)] += xi * xj * curv;
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                hess[(j, i)] = hess[(i, j)];
            }
            hess[(i, i)] += RIDGE;
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => match hess.lu().solve(&grad) {
                Some(s) => s,
                None => break,
            },
        };
        beta += &step;
        if step.amax() < TOL {
            break;
        }
    }
    beta.iter().copied().collect()
}

/// Share of weight on 1, `NaN` without data.
pub(crate) fn proportion(w0: f64, w1: f64) -> f64 {
    let total = w0 + w1;
    if total > 0.0 {
        w1 / total
    } else {
        f64::NAN
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_saturated_log_odds() {
        // One binary feature: the MLE reproduces each group's log odds.
        let groups = vec![(vec![0.0], 300.0, 100.0), (vec![1.0], 100.0, 300.0)];
        let b = logistic_irls(&groups, 1);
        assert!((b[0] - (1.0f64 / 3.0).ln()).abs() < 1e-9);
        assert!((b[1] - 2.0 * 3.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn intercept_only_matches_proportion() {
        let b = logistic_irls(&[(vec![], 30.0, 10.0)], 0);
        assert!((sigmoid(b[0]) - 0.25).abs() < 1e-12);
    }
}
