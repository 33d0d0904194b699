//! Multivariate probit through its univariate margins.

use nalgebra::{DMatrix, DVector};

use super::{
    beta_names, newton_maximize, outer_mean, require_converged, sandwich, FitOptions, FitResult,
    ModelKind, Nuisance, Quadratic,
};
use crate::data::ClusteredDataset;
use crate::error::{Error, Result};
use crate::mvn::normal::{inverse_mills, std_normal_log_cdf};

fn check(d: &ClusteredDataset) -> Result<()> {
    d.ensure_valid()?;
    if !d.response_kind().is_binary() {
        return Err(Error::InvalidDataset(
            "the probit fitter needs binary responses".into(),
        ));
    }
    Ok(())
}

fn success(y: f64) -> bool {
    y > 0.0
}

/// `sum_ij [y log Phi(x beta) + (1 - y) log Phi(-x beta)]`.
pub fn probit_log_cl(d: &ClusteredDataset, beta: &DVector<f64>) -> f64 {
    d.clusters()
        .iter()
        .map(|c| {
            let eta = &c.x * beta;
            eta.iter()
                .zip(c.y.iter())
                .map(|(&e, &y)| std_normal_log_cdf(if success(y) { e } else { -e }))
                .sum::<f64>()
        })
        .sum()
}

/// Per-cluster score vectors `X_i^T g_i`.
pub fn probit_cluster_scores(d: &ClusteredDataset, beta: &DVector<f64>) -> Vec<DVector<f64>> {
    d.clusters()
        .iter()
        .map(|c| {
            let eta = &c.x * beta;
            let g = DVector::from_iterator(
                eta.len(),
                eta.iter().zip(c.y.iter()).map(|(&e, &y)| {
                    if success(y) {
                        inverse_mills(e)
                    } else {
                        -inverse_mills(-e)
                    }
                }),
            );
            c.x.transpose() * g
        })
        .collect()
}

pub fn probit_cl_score(d: &ClusteredDataset, beta: &DVector<f64>) -> DVector<f64> {
    probit_cluster_scores(d, beta)
        .into_iter()
        .fold(DVector::zeros(beta.len()), |acc, u| acc + u)
}

fn evaluate(d: &ClusteredDataset, beta: &DVector<f64>, derivatives: bool) -> Quadratic {
    let p = beta.len();
    let value = probit_log_cl(d, beta);
    if !derivatives {
        return Quadratic {
            value,
            grad: DVector::zeros(0),
            neg_hess: DMatrix::zeros(0, 0),
        };
    }
    let mut grad = DVector::zeros(p);
    let mut neg_hess = DMatrix::zeros(p, p);
    for c in d.clusters() {
        for (j, &y) in c.y.iter().enumerate() {
            let x = c.x.row(j).transpose();
            let e = x.dot(beta);
            let (g, h) = if success(y) {
                let l = inverse_mills(e);
                (l, l * (e + l))
            } else {
                let l = inverse_mills(-e);
                (-l, l * (l - e))
            };
            grad.axpy(g, &x, 1.0);
            neg_hess.ger(h, &x, &x, 1.0);
        }
    }
    Quadratic {
        value,
        grad,
        neg_hess,
    }
}

/// Expected information `n^-1 sum_ij x x^T phi^2 / (Phi (1 - Phi))`.
fn expected_information(d: &ClusteredDataset, beta: &DVector<f64>) -> DMatrix<f64> {
    let p = beta.len();
    let mut h = DMatrix::zeros(p, p);
    for c in d.clusters() {
        for j in 0..c.size() {
            let x = c.x.row(j).transpose();
            let e = x.dot(beta);
            h.ger(inverse_mills(e) * inverse_mills(-e), &x, &x, 1.0);
        }
    }
    h / d.n() as f64
}

/// Newton-Raphson maximization of the univariate probit composite likelihood.
pub fn probit_cl_fit(d: &ClusteredDataset, opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    check(d)?;
    let out = newton_maximize(
        DVector::zeros(d.p()),
        opts,
        "probit Newton-Raphson",
        |b, full| Ok(evaluate(d, b, full)),
    )?;
    require_converged(&out, "probit Newton-Raphson")?;
    let h_hat = expected_information(d, &out.theta);
    let j_hat = outer_mean(&probit_cluster_scores(d, &out.theta), d.p());
    let gamma_hat = sandwich(&h_hat, &j_hat, opts.naive)?;
    Ok(FitResult {
        model: ModelKind::Probit,
        score_norm: out.grad.amax(),
        theta_hat: out.theta,
        param_names: beta_names(d.p()),
        n_beta: d.p(),
        n: d.n(),
        h_hat,
        j_hat,
        gamma_hat,
        naive: opts.naive,
        loglik: out.value,
        iterations: out.iterations,
        converged: out.converged,
        nuisance: Nuisance::None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Cluster, ResponseKind};

    #[test]
    fn separated_data_is_reported() {
        let clusters = (0..4)
            .map(|i| {
                let x = if i % 2 == 0 { 1.0 } else { -1.0 };
                let y = if i % 2 == 0 { 1.0 } else { 0.0 };
                Cluster::new(
                    i.to_string(),
                    DVector::from_element(2, y),
                    DMatrix::from_element(2, 1, x),
                )
            })
            .collect();
        let d = ClusteredDataset::new(clusters, ResponseKind::Binary01, 1);
        let err = probit_cl_fit(&d, &FitOptions::default()).unwrap_err();
        assert!(
            matches!(err, Error::Separation { .. } | Error::NonConvergence { .. }),
            "{err}"
        );
    }

    #[test]
    fn rejects_continuous_response() {
        let clusters = (0..2)
            .map(|i| {
                Cluster::new(
                    i.to_string(),
                    DVector::from_element(1, 0.3),
                    DMatrix::from_element(1, 1, 1.0),
                )
            })
            .collect();
        let d = ClusteredDataset::new(clusters, ResponseKind::Continuous, 1);
        assert!(probit_cl_fit(&d, &FitOptions::default()).is_err());
    }
}
