//! Quadratic exponential model for clustered binary data, fitted through its
//! full-conditional composite likelihood.
//!
//! Responses are recoded to -1/+1. With `z_i` successes in a cluster of size
//! `m_i`, an observed success contributes `log p_is` and an observed failure
//! `log p_if`, where
//!
//! ```text
//! p_is = expit( mu_ij - w (m_i - 2 z_i + 1))
//! p_if = expit(-mu_ij + w (m_i - 2 z_i - 1))
//! ```
//!
//! Both are logistic terms in the pseudo-covariate `s_ij = sum_{k != j} y_ik`,
//! which equals `-(m_i - 2 z_i + 1)` for a success and `-(m_i - 2 z_i - 1)` for
//! a failure, so the fit is a logistic regression of `y_ij` on `(x_ij, s_ij)`.

use nalgebra::{DMatrix, DVector, RowDVector};

use super::{
    beta_names, newton_maximize, outer_mean, require_converged, sandwich, CovariateLevel,
    FitOptions, FitResult, ModelKind, Nuisance, Quadratic,
};
use crate::data::{Cluster, ClusteredDataset};
use crate::error::{Error, Result};

/// `log(1 + exp(x))` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `log expit(x)`.
pub(crate) fn log_expit(x: f64) -> f64 {
    -softplus(-x)
}

pub(crate) fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Main-effect linear predictors `mu_ij` for one cluster.
pub fn main_effects(c: &Cluster, beta: &DVector<f64>, level: CovariateLevel) -> DVector<f64> {
    match level {
        CovariateLevel::Observation => &c.x * beta,
        CovariateLevel::ClusterMean => {
            let mean: RowDVector<f64> = c.x.row_mean();
            DVector::from_element(c.size(), mean.dot(&beta.transpose()))
        }
    }
}

/// Conditional log-probabilities `log f(y_j | y_(-j))` of one -1/+1 cluster
/// from the `p_is` / `p_if` formulas.
pub fn conditional_log_probs(y: &[f64], mu: &[f64], w: f64) -> Vec<f64> {
    let m = y.len() as f64;
    let z = y.iter().filter(|v| **v > 0.0).count() as f64;
    y.iter()
        .zip(mu)
        .map(|(&yj, &mu_j)| {
            if yj > 0.0 {
                log_expit(mu_j - w * (m - 2.0 * z + 1.0))
            } else {
                log_expit(-mu_j + w * (m - 2.0 * z - 1.0))
            }
        })
        .collect()
}

fn pm1(d: &ClusteredDataset, c: &Cluster) -> DVector<f64> {
    d.pm1_response(c)
}

fn split(theta: &DVector<f64>) -> (DVector<f64>, f64) {
    let p = theta.len() - 1;
    (theta.rows(0, p).into_owned(), theta[p])
}

/// Conditional composite log-likelihood at `theta = (beta, w)`.
pub fn quadexp_log_cl(d: &ClusteredDataset, theta: &DVector<f64>, level: CovariateLevel) -> f64 {
    let (beta, w) = split(theta);
    d.clusters()
        .iter()
        .map(|c| {
            let y = pm1(d, c);
            let mu = main_effects(c, &beta, level);
            conditional_log_probs(y.as_slice(), mu.as_slice(), w)
                .iter()
                .sum::<f64>()
        })
        .sum()
}

/// Pseudo-design rows `(covariates, s_ij)` for one cluster.
fn design(c: &Cluster, y: &DVector<f64>, level: CovariateLevel) -> DMatrix<f64> {
    let p = c.x.ncols();
    let total: f64 = y.sum();
    let mean = c.x.row_mean();
    DMatrix::from_fn(c.size(), p + 1, |j, k| {
        if k == p {
            total - y[j]
        } else {
            match level {
                CovariateLevel::Observation => c.x[(j, k)],
                CovariateLevel::ClusterMean => mean[k],
            }
        }
    })
}

/// Per-cluster gradients of the conditional log-CL.
pub fn quadexp_cluster_scores(
    d: &ClusteredDataset,
    theta: &DVector<f64>,
    level: CovariateLevel,
) -> Vec<DVector<f64>> {
    d.clusters()
        .iter()
        .map(|c| {
            let y = pm1(d, c);
            let z = design(c, &y, level);
            let eta = &z * theta;
            let resid = DVector::from_iterator(
                y.len(),
                y.iter()
                    .zip(eta.iter())
                    .map(|(&v, &e)| 0.5 * (v + 1.0) - expit(e)),
            );
            z.transpose() * resid
        })
        .collect()
}

pub fn quadexp_cl_score(
    d: &ClusteredDataset,
    theta: &DVector<f64>,
    level: CovariateLevel,
) -> DVector<f64> {
    quadexp_cluster_scores(d, theta, level)
        .into_iter()
        .fold(DVector::zeros(theta.len()), |acc, u| acc + u)
}

fn evaluate(
    d: &ClusteredDataset,
    theta: &DVector<f64>,
    level: CovariateLevel,
    full: bool,
) -> Quadratic {
    let k = theta.len();
    let mut value = 0.0;
    let mut grad = DVector::zeros(if full { k } else { 0 });
    let mut neg_hess = DMatrix::zeros(if full { k } else { 0 }, if full { k } else { 0 });
    for c in d.clusters() {
        let y = pm1(d, c);
        let z = design(c, &y, level);
        let eta = &z * theta;
        for j in 0..y.len() {
            value += log_expit(y[j] * eta[j]);
            if full {
                let row = z.row(j).transpose();
                let pi = expit(eta[j]);
                grad.axpy(0.5 * (y[j] + 1.0) - pi, &row, 1.0);
                neg_hess.ger(pi * (1.0 - pi), &row, &row, 1.0);
            }
        }
    }
    Quadratic {
        value,
        grad,
        neg_hess,
    }
}

/// Joint estimate of `(beta, w)` by iteratively reweighted least squares on
/// the pseudo-logistic design.
pub fn quadexp_cl_fit(d: &ClusteredDataset, opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    d.ensure_valid()?;
    if !d.response_kind().is_binary() {
        return Err(Error::InvalidDataset(
            "the quadratic exponential fitter needs binary responses".into(),
        ));
    }
    let level = opts.covariate_level;
    let k = d.p() + 1;
    let out = newton_maximize(
        DVector::zeros(k),
        opts,
        "quadratic exponential IRLS",
        |t, full| Ok(evaluate(d, t, level, full)),
    )?;
    require_converged(&out, "quadratic exponential IRLS")?;
    let n = d.n() as f64;
    let h_hat = evaluate(d, &out.theta, level, true).neg_hess / n;
    let j_hat = outer_mean(&quadexp_cluster_scores(d, &out.theta, level), k);
    let gamma_hat = sandwich(&h_hat, &j_hat, opts.naive)?;
    let mut names = beta_names(d.p());
    names.push("w".into());
    Ok(FitResult {
        model: ModelKind::Quadexp,
        score_norm: out.grad.amax(),
        loglik: quadexp_log_cl(d, &out.theta, level),
        theta_hat: out.theta,
        param_names: names,
        n_beta: d.p(),
        n: d.n(),
        h_hat,
        j_hat,
        gamma_hat,
        naive: opts.naive,
        iterations: out.iterations,
        converged: out.converged,
        nuisance: Nuisance::None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_covariate_matches_rule() {
        let y = DVector::from_row_slice(&[1.0, -1.0, 1.0, 1.0, -1.0]);
        let c = Cluster::new("a", y.clone(), DMatrix::zeros(5, 1));
        let z = design(&c, &y, CovariateLevel::Observation);
        let m = 5.0;
        let succ = 3.0;
        for j in 0..5 {
            let want = if y[j] > 0.0 {
                -(m - 2.0 * succ + 1.0)
            } else {
                -(m - 2.0 * succ - 1.0)
            };
            assert_eq!(z[(j, 1)], want);
        }
    }

    #[test]
    fn logistic_form_equals_success_failure_form() {
        let y = [1.0, 1.0, -1.0, 1.0];
        let mu = [0.3, -0.2, 0.5, 1.1];
        let w = 0.7;
        let direct = conditional_log_probs(&y, &mu, w);
        let s: f64 = y.iter().sum();
        for j in 0..4 {
            let eta = mu[j] + w * (s - y[j]);
            assert!((direct[j] - log_expit(y[j] * eta)).abs() < 1e-15);
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert!((log_expit(0.0) + std::f64::consts::LN_2).abs() < 1e-15);
    }
}
