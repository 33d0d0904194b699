//! Composite-likelihood fitters and the Godambe sandwich.
//!
//! Every fitter returns a [`FitResult`] on the same scale: `h_hat` and
//! `j_hat` are per-cluster averages, so `gamma_hat / n` estimates the
//! covariance of `theta_hat`.

pub mod gamma;
pub mod mvn;
pub mod probit;
pub mod quadexp;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::ClusteredDataset;
use crate::error::{Error, Result};
use crate::numeric::{spd_inverse, spd_solve, symmetrize};

pub use gamma::gamma_cl_fit;
pub use mvn::{mvn_cl_fit, mvn_mle_fit};
pub use probit::probit_cl_fit;
pub use quadexp::quadexp_cl_fit;

/// Largest 2-norm condition number of `h_hat` we are willing to invert.
pub const MAX_CONDITION: f64 = 1e12;

/// Coefficients beyond this magnitude are taken as evidence of separation.
pub const SEPARATION_BOUND: f64 = 1e3;

const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mvn,
    Probit,
    Quadexp,
    Gamma,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Mvn,
        ModelKind::Probit,
        ModelKind::Quadexp,
        ModelKind::Gamma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mvn => "mvn",
            ModelKind::Probit => "probit",
            ModelKind::Quadexp => "quadexp",
            ModelKind::Gamma => "gamma",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mvn" | "normal" => Ok(ModelKind::Mvn),
            "probit" => Ok(ModelKind::Probit),
            "quadexp" | "qe" => Ok(ModelKind::Quadexp),
            "gamma" => Ok(ModelKind::Gamma),
            other => Err(Error::invalid(format!(
                "unknown model '{other}' (expected mvn, probit, quadexp or gamma)"
            ))),
        }
    }
}

/// Where the quadratic exponential main effect gets its covariates from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateLevel {
    /// `mu_ij = x_ij beta`, one linear predictor per observation.
    #[default]
    Observation,
    /// `mu_i = xbar_i beta` with `xbar_i` the column means of `X_i`.
    ClusterMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iter: usize,
    pub param_tol: f64,
    pub score_tol: f64,
    /// Report `gamma_hat = h_hat^-1` instead of the sandwich.
    pub naive: bool,
    pub covariate_level: CovariateLevel,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 100,
            param_tol: 1e-8,
            score_tol: 1e-6,
            naive: false,
            covariate_level: CovariateLevel::Observation,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.param_tol > 0.0) || !(self.score_tol > 0.0) {
            return Err(Error::invalid("fit tolerances must be positive"));
        }
        Ok(())
    }

    pub fn naive(mut self, naive: bool) -> Self {
        self.naive = naive;
        self
    }
}

/// Model-specific nuisance estimates.
#[derive(Debug, Clone, PartialEq)]
pub enum Nuisance {
    None,
    /// Residual covariance of the multivariate normal model.
    Covariance(DMatrix<f64>),
    /// Gamma shape `nu` and the mean deviance it was derived from.
    Dispersion {
        nu: f64,
        mean_deviance: f64,
    },
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: ModelKind,
    pub theta_hat: DVector<f64>,
    pub param_names: Vec<String>,
    /// Leading entries of `theta_hat` that are regression coefficients.
    pub n_beta: usize,
    /// Number of clusters the fit used.
    pub n: usize,
    pub h_hat: DMatrix<f64>,
    pub j_hat: DMatrix<f64>,
    pub gamma_hat: DMatrix<f64>,
    pub naive: bool,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Sup-norm of the log-CL gradient at `theta_hat`.
    pub score_norm: f64,
    pub nuisance: Nuisance,
}

impl FitResult {
    pub fn beta(&self) -> DVector<f64> {
        self.theta_hat.rows(0, self.n_beta).into_owned()
    }

    /// Sandwich (or naive) covariance recomputed from `h_hat` and `j_hat`.
    pub fn covariance(&self, naive: bool) -> Result<DMatrix<f64>> {
        sandwich(&self.h_hat, &self.j_hat, naive)
    }

    /// Standard errors `sqrt(gamma_hat_jj / n)`.
    pub fn std_errors(&self) -> DVector<f64> {
        let n = self.n as f64;
        self.gamma_hat.map_diagonal(|g| (g / n).max(0.0).sqrt())
    }

    /// A copy whose `gamma_hat` is the naive or sandwich form.
    pub fn with_naive(&self, naive: bool) -> Result<FitResult> {
        let mut out = self.clone();
        out.gamma_hat = self.covariance(naive)?;
        out.naive = naive;
        Ok(out)
    }
}

/// `H^-1 J H^-1`, or `H^-1` when `naive`; symmetrized on output.
pub fn sandwich(h_hat: &DMatrix<f64>, j_hat: &DMatrix<f64>, naive: bool) -> Result<DMatrix<f64>> {
    if !h_hat.is_square() || h_hat.shape() != j_hat.shape() {
        return Err(Error::dims(format!(
            "H is {:?} and J is {:?}",
            h_hat.shape(),
            j_hat.shape()
        )));
    }
    let h_inv = spd_inverse(&symmetrize(h_hat), MAX_CONDITION)?;
    if naive {
        return Ok(h_inv);
    }
    Ok(symmetrize(&(&h_inv * j_hat * &h_inv)))
}

/// Fits `model` to `d`.
pub fn fit(model: ModelKind, d: &ClusteredDataset, opts: &FitOptions) -> Result<FitResult> {
    match model {
        ModelKind::Mvn => mvn_cl_fit(d, opts),
        ModelKind::Probit => probit_cl_fit(d, opts),
        ModelKind::Quadexp => quadexp_cl_fit(d, opts),
        ModelKind::Gamma => gamma_cl_fit(d, opts),
    }
}

pub(crate) fn beta_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("beta{j}")).collect()
}

/// Objective value, gradient and negative Hessian at a point.
pub(crate) struct Quadratic {
    pub value: f64,
    pub grad: DVector<f64>,
    pub neg_hess: DMatrix<f64>,
}

pub(crate) struct NewtonOutcome {
    pub theta: DVector<f64>,
    pub value: f64,
    pub grad: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Damped Newton ascent: full step, halved until the objective does not
/// decrease. Stops once both the step and the gradient are below tolerance.
pub(crate) fn newton_maximize<F>(
    theta0: DVector<f64>,
    opts: &FitOptions,
    what: &str,
    mut eval: F,
) -> Result<NewtonOutcome>
where
    F: FnMut(&DVector<f64>, bool) -> Result<Quadratic>,
{
    let mut theta = theta0;
    let mut cur = eval(&theta, true)?;
    for it in 1..=opts.max_iter {
        let step = spd_solve(&cur.neg_hess, &cur.grad).ok_or(Error::IllConditioned {
            condition: f64::INFINITY,
        })?;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = &theta + &step * scale;
            if cand.amax() > SEPARATION_BOUND {
                return Err(Error::Separation {
                    bound: SEPARATION_BOUND,
                });
            }
            let value = eval(&cand, false)?.value;
            let slack = 1e-12 * cur.value.abs().max(1.0);
            if value.is_finite() && value >= cur.value - slack {
                accepted = Some(cand);
                break;
            }
            scale *= 0.5;
        }
        let Some(next) = accepted else {
            return Err(Error::NonConvergence {
                what: format!("{what} step-halving"),
                iterations: it,
            });
        };
        let moved = (&next - &theta).amax();
        theta = next;
        cur = eval(&theta, true)?;
        if moved < opts.param_tol && cur.grad.amax() <= opts.score_tol {
            return Ok(NewtonOutcome {
                theta,
                value: cur.value,
                grad: cur.grad,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(NewtonOutcome {
        theta,
        value: cur.value,
        grad: cur.grad,
        iterations: opts.max_iter,
        converged: false,
    })
}

/// `n^-1 sum_i u_i u_i^T`.
pub(crate) fn outer_mean(scores: &[DVector<f64>], dim: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(dim, dim);
    for u in scores {
        j.ger(1.0, u, u, 1.0);
    }
    symmetrize(&(j / scores.len() as f64))
}

pub(crate) fn require_converged(out: &NewtonOutcome, what: &str) -> Result<()> {
    if out.converged {
        Ok(())
    } else {
        Err(Error::NonConvergence {
            what: what.to_string(),
            iterations: out.iterations,
        })
    }
}
