//! Multivariate normal regression: univariate composite likelihood with
//! per-position variance nuisances, and the full-likelihood GLS comparator.

use nalgebra::{DMatrix, DVector};

use super::{beta_names, sandwich, FitOptions, FitResult, ModelKind, Nuisance, MAX_CONDITION};
use crate::data::ClusteredDataset;
use crate::error::{Error, Result};
use crate::numeric::{condition_number, spd_inverse, symmetrize};

fn common_size(d: &ClusteredDataset) -> Result<usize> {
    d.ensure_valid()?;
    if let Some(bad) = d
        .clusters()
        .iter()
        .flat_map(|c| c.y.iter())
        .find(|v| !v.is_finite())
    {
        return Err(Error::InvalidDataset(format!("non-finite response {bad}")));
    }
    d.constant_size().ok_or_else(|| {
        Error::Unsupported(
            "the multivariate normal fitters need the same cluster size for every cluster".into(),
        )
    })
}

/// Residual covariance `n^-1 sum_i r_i r_i^T` with `r_i = y_i - X_i beta`.
pub fn residual_covariance(d: &ClusteredDataset, beta: &DVector<f64>) -> DMatrix<f64> {
    let m = d.clusters()[0].size();
    let mut s = DMatrix::zeros(m, m);
    for c in d.clusters() {
        let r = &c.y - &c.x * beta;
        s.ger(1.0, &r, &r, 1.0);
    }
    symmetrize(&(s / d.n() as f64))
}

/// `sum_ij [-log(2 pi s_j)/2 - (y_ij - x_ij beta)^2 / (2 s_j)]` for position
/// variances `s`.
pub fn mvn_log_cl(d: &ClusteredDataset, beta: &DVector<f64>, variances: &DVector<f64>) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    d.clusters()
        .iter()
        .map(|c| {
            let r = &c.y - &c.x * beta;
            r.iter()
                .zip(variances.iter())
                .map(|(e, s)| -0.5 * (two_pi * s).ln() - e * e / (2.0 * s))
                .sum::<f64>()
        })
        .sum()
}

/// Gradient of [`mvn_log_cl`] in `beta`.
pub fn mvn_cl_score(
    d: &ClusteredDataset,
    beta: &DVector<f64>,
    variances: &DVector<f64>,
) -> DVector<f64> {
    let mut g = DVector::zeros(beta.len());
    for c in d.clusters() {
        let r = (&c.y - &c.x * beta).component_div(variances);
        g += c.x.transpose() * r;
    }
    g
}

/// Weighted least squares `(sum X^T W X)^-1 sum X^T W y` for a symmetric `W`.
fn weighted_ls(d: &ClusteredDataset, w: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = d.p();
    let mut a = DMatrix::zeros(p, p);
    let mut b = DVector::zeros(p);
    for c in d.clusters() {
        let xtw = c.x.transpose() * w;
        a += &xtw * &c.x;
        b += &xtw * &c.y;
    }
    let a = symmetrize(&a);
    let condition = condition_number(&a);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    let beta = a
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&b))
        .ok_or(Error::IllConditioned { condition })?;
    Ok((beta, a))
}

fn positive_diagonal(s: &DMatrix<f64>) -> Result<DVector<f64>> {
    let diag = s.diagonal();
    if diag.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidDataset(
            "a residual variance is zero; the responses are fitted exactly".into(),
        ));
    }
    Ok(diag)
}

/// Univariate-CL fit: alternates the closed-form weighted least-squares step
/// for `beta` with the residual covariance update for `Sigma`.
pub fn mvn_cl_fit(d: &ClusteredDataset, opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    let m = common_size(d)?;
    let n = d.n() as f64;
    let (mut beta, _) = weighted_ls(d, &DMatrix::identity(m, m))?;
    let mut sigma = residual_covariance(d, &beta);
    let mut variances = positive_diagonal(&sigma)?;
    let mut converged = false;
    let mut iterations = 0;
    let mut xtwx = DMatrix::zeros(d.p(), d.p());
    for it in 1..=opts.max_iter {
        iterations = it;
        let w = DMatrix::from_diagonal(&variances.map(|s| 1.0 / s));
        let (next, a) = weighted_ls(d, &w)?;
        xtwx = a;
        let moved = (&next - &beta).amax();
        beta = next;
        if moved < opts.param_tol {
            converged = true;
            break;
        }
        sigma = residual_covariance(d, &beta);
        variances = positive_diagonal(&sigma)?;
    }
    let w = DMatrix::from_diagonal(&variances.map(|s| 1.0 / s));
    let wsw = &w * &sigma * &w;
    let mut j = DMatrix::zeros(d.p(), d.p());
    for c in d.clusters() {
        j += c.x.transpose() * &wsw * &c.x;
    }
    let h_hat = xtwx / n;
    let j_hat = symmetrize(&(j / n));
    let gamma_hat = sandwich(&h_hat, &j_hat, opts.naive)?;
    let score = mvn_cl_score(d, &beta, &variances);
    Ok(FitResult {
        model: ModelKind::Mvn,
        loglik: mvn_log_cl(d, &beta, &variances),
        theta_hat: beta,
        param_names: beta_names(d.p()),
        n_beta: d.p(),
        n: d.n(),
        h_hat,
        j_hat,
        gamma_hat,
        naive: opts.naive,
        iterations,
        converged: converged && score.amax() <= opts.score_tol,
        score_norm: score.amax(),
        nuisance: Nuisance::Covariance(sigma),
    })
}

/// Full Gaussian log-likelihood for a common covariance `sigma`.
pub fn mvn_log_likelihood(
    d: &ClusteredDataset,
    beta: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<f64> {
    let m = sigma.nrows();
    let ch = sigma.clone().cholesky().ok_or_else(|| {
        Error::NotCorrelation("residual covariance is not positive definite".into())
    })?;
    let log_det = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let c0 = -0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
    Ok(d.clusters()
        .iter()
        .map(|c| {
            let r = &c.y - &c.x * beta;
            c0 - 0.5 * r.dot(&ch.solve(&r))
        })
        .sum())
}

/// Full-likelihood GLS fit, used only as the efficiency comparator.
pub fn mvn_mle_fit(d: &ClusteredDataset, opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    let m = common_size(d)?;
    if d.n() <= m {
        return Err(Error::InvalidDataset(format!(
            "the full-likelihood fit needs more clusters ({}) than the cluster size ({m})",
            d.n()
        )));
    }
    let n = d.n() as f64;
    let (mut beta, _) = weighted_ls(d, &DMatrix::identity(m, m))?;
    let mut sigma = residual_covariance(d, &beta);
    let mut sigma_inv = spd_inverse(&sigma, MAX_CONDITION)?;
    let mut converged = false;
    let mut iterations = 0;
    let mut info = DMatrix::zeros(d.p(), d.p());
    for it in 1..=opts.max_iter {
        iterations = it;
        let (next, a) = weighted_ls(d, &sigma_inv)?;
        info = a;
        let moved = (&next - &beta).amax();
        beta = next;
        if moved < opts.param_tol {
            converged = true;
            break;
        }
        sigma = residual_covariance(d, &beta);
        sigma_inv = spd_inverse(&sigma, MAX_CONDITION)?;
    }
    let h_hat = info / n;
    let gamma_hat = sandwich(&h_hat, &h_hat, true)?;
    let mut score = DVector::zeros(d.p());
    for c in d.clusters() {
        score += c.x.transpose() * (&sigma_inv * (&c.y - &c.x * &beta));
    }
    Ok(FitResult {
        model: ModelKind::Mvn,
        loglik: mvn_log_likelihood(d, &beta, &sigma)?,
        theta_hat: beta,
        param_names: beta_names(d.p()),
        n_beta: d.p(),
        n: d.n(),
        j_hat: h_hat.clone(),
        h_hat,
        gamma_hat,
        naive: true,
        iterations,
        converged: converged && score.amax() <= opts.score_tol,
        score_norm: score.amax(),
        nuisance: Nuisance::Covariance(sigma),
    })
}

/// Mean over the regression coefficients of `SE_mle / SE_cl`, each SE taken
/// from the respective estimated covariance.
pub fn efficiency_ratio(mle: &FitResult, cl: &FitResult) -> Result<f64> {
    if mle.n_beta != cl.n_beta {
        return Err(Error::dims("fits have different coefficient counts"));
    }
    let k = mle.n_beta;
    let total: f64 = (0..k)
        .map(|j| (mle.gamma_hat[(j, j)] / cl.gamma_hat[(j, j)]).sqrt())
        .sum();
    Ok(total / k as f64)
}
