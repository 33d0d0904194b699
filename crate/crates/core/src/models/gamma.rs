//! Multivariate gamma regression with log link through its univariate
//! margins. The shape `nu` is a nuisance estimated from the mean deviance.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use super::{
    beta_names, newton_maximize, outer_mean, require_converged, sandwich, FitOptions, FitResult,
    ModelKind, Nuisance, Quadratic,
};
use crate::data::ClusteredDataset;
use crate::error::{Error, Result};

fn check(d: &ClusteredDataset) -> Result<()> {
    d.ensure_valid()?;
    for c in d.clusters() {
        if let Some(v) = c.y.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "cluster {}: gamma responses must be positive, found {v}",
                c.id
            )));
        }
    }
    if d.total_observations() <= d.p() {
        return Err(Error::InvalidDataset(format!(
            "{} observations cannot support {} coefficients",
            d.total_observations(),
            d.p()
        )));
    }
    Ok(())
}

/// `sum_ij [-nu y/mu - nu log mu + nu log nu + (nu - 1) log y - log Gamma(nu)]`
/// with `mu = exp(x beta)`.
pub fn gamma_log_cl(d: &ClusteredDataset, beta: &DVector<f64>, nu: f64) -> f64 {
    let c0 = nu * nu.ln() - ln_gamma(nu);
    d.clusters()
        .iter()
        .map(|c| {
            let eta = &c.x * beta;
            eta.iter()
                .zip(c.y.iter())
                .map(|(&e, &y)| -nu * y * (-e).exp() - nu * e + c0 + (nu - 1.0) * y.ln())
                .sum::<f64>()
        })
        .sum()
}

/// Per-cluster scores `nu X_i^T ((y_i - mu_i) / mu_i)`.
pub fn gamma_cluster_scores(
    d: &ClusteredDataset,
    beta: &DVector<f64>,
    nu: f64,
) -> Vec<DVector<f64>> {
    d.clusters()
        .iter()
        .map(|c| {
            let eta = &c.x * beta;
            let r = DVector::from_iterator(
                eta.len(),
                eta.iter()
                    .zip(c.y.iter())
                    .map(|(&e, &y)| nu * (y * (-e).exp() - 1.0)),
            );
            c.x.transpose() * r
        })
        .collect()
}

pub fn gamma_cl_score(d: &ClusteredDataset, beta: &DVector<f64>, nu: f64) -> DVector<f64> {
    gamma_cluster_scores(d, beta, nu)
        .into_iter()
        .fold(DVector::zeros(beta.len()), |acc, u| acc + u)
}

/// `D = 2 / (N - p) sum_ij [(y - mu)/mu + log(mu / y)]`, `N` the total
/// number of observations.
pub fn gamma_mean_deviance(d: &ClusteredDataset, beta: &DVector<f64>) -> f64 {
    let mut total = 0.0;
    for c in d.clusters() {
        let eta = &c.x * beta;
        for (&e, &y) in eta.iter().zip(c.y.iter()) {
            let ratio = y * (-e).exp();
            total += (ratio - 1.0) - ratio.ln();
        }
    }
    2.0 * total / (d.total_observations() - d.p()) as f64
}

/// Shape from the mean deviance: `1/nu = D (6 (N - p) + N D) / (6 (N - p) + 2 N D)`.
pub fn shape_from_deviance(mean_deviance: f64, total_obs: usize, p: usize) -> f64 {
    let dof = 6.0 * (total_obs - p) as f64;
    let nd = total_obs as f64 * mean_deviance;
    (dof + 2.0 * nd) / (mean_deviance * (dof + nd))
}

fn evaluate(d: &ClusteredDataset, beta: &DVector<f64>, full: bool) -> Quadratic {
    let value = gamma_log_cl(d, beta, 1.0);
    if !full {
        return Quadratic {
            value,
            grad: DVector::zeros(0),
            neg_hess: DMatrix::zeros(0, 0),
        };
    }
    let p = beta.len();
    let mut grad = DVector::zeros(p);
    let mut neg_hess = DMatrix::zeros(p, p);
    for c in d.clusters() {
        for (j, &y) in c.y.iter().enumerate() {
            let x = c.x.row(j).transpose();
            let ratio = y * (-x.dot(beta)).exp();
            grad.axpy(ratio - 1.0, &x, 1.0);
            neg_hess.ger(ratio, &x, &x, 1.0);
        }
    }
    Quadratic {
        value,
        grad,
        neg_hess,
    }
}

/// Least squares of `log y` on the covariates, used as the Newton start.
fn log_ls_start(d: &ClusteredDataset) -> DVector<f64> {
    let p = d.p();
    let mut a = DMatrix::zeros(p, p);
    let mut b = DVector::zeros(p);
    for c in d.clusters() {
        a += c.x.transpose() * &c.x;
        b += c.x.transpose() * c.y.map(f64::ln);
    }
    a.cholesky()
        .map(|ch| ch.solve(&b))
        .unwrap_or_else(|| DVector::zeros(p))
}

/// Newton-Raphson fit of the gamma univariate composite likelihood.
///
/// `beta` does not depend on `nu`, so it is fitted at `nu = 1` and the shape
/// is then set from the mean deviance.
pub fn gamma_cl_fit(d: &ClusteredDataset, opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    check(d)?;
    let out = newton_maximize(log_ls_start(d), opts, "gamma Newton-Raphson", |b, full| {
        Ok(evaluate(d, b, full))
    })?;
    require_converged(&out, "gamma Newton-Raphson")?;
    let beta = out.theta;
    let mean_deviance = gamma_mean_deviance(d, &beta);
    if !(mean_deviance > 0.0) {
        return Err(Error::InvalidDataset(
            "zero deviance: the dispersion is not identifiable".into(),
        ));
    }
    let nu = shape_from_deviance(mean_deviance, d.total_observations(), d.p());
    let n = d.n() as f64;
    let mut xtx = DMatrix::zeros(d.p(), d.p());
    for c in d.clusters() {
        xtx += c.x.transpose() * &c.x;
    }
    let h_hat = xtx * (nu / n);
    let j_hat = outer_mean(&gamma_cluster_scores(d, &beta, nu), d.p());
    let gamma_hat = sandwich(&h_hat, &j_hat, opts.naive)?;
    let score = gamma_cl_score(d, &beta, nu);
    Ok(FitResult {
        model: ModelKind::Gamma,
        loglik: gamma_log_cl(d, &beta, nu),
        score_norm: score.amax(),
        converged: out.converged && score.amax() <= opts.score_tol,
        theta_hat: beta,
        param_names: beta_names(d.p()),
        n_beta: d.p(),
        n: d.n(),
        h_hat,
        j_hat,
        gamma_hat,
        naive: opts.naive,
        iterations: out.iterations,
        nuisance: Nuisance::Dispersion { nu, mean_deviance },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Cluster, ResponseKind};

    #[test]
    fn intercept_only_fit_is_log_mean() {
        let e = std::f64::consts::E;
        let clusters = [0.9, 1.1]
            .iter()
            .enumerate()
            .map(|(i, f)| {
                Cluster::new(
                    i.to_string(),
                    DVector::from_element(1, e * f),
                    DMatrix::from_element(1, 1, 1.0),
                )
            })
            .collect();
        let d = ClusteredDataset::new(clusters, ResponseKind::Positive, 1);
        let fit = gamma_cl_fit(&d, &FitOptions::default()).unwrap();
        assert!((fit.theta_hat[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn shape_formula_limits() {
        // Large N: 1/nu -> D (6 + D) / (6 + 2 D).
        let d = 0.4;
        let nu = shape_from_deviance(d, 10_000_000, 1);
        let want = (6.0 + 2.0 * d) / (d * (6.0 + d));
        assert!((nu - want).abs() < 1e-5);
    }

    #[test]
    fn rejects_non_positive() {
        let clusters = (0..2)
            .map(|i| {
                Cluster::new(
                    i.to_string(),
                    DVector::from_element(2, 0.0),
                    DMatrix::from_element(2, 1, 1.0),
                )
            })
            .collect();
        let d = ClusteredDataset::new(clusters, ResponseKind::Continuous, 1);
        assert!(gamma_cl_fit(&d, &FitOptions::default()).is_err());
    }
}
