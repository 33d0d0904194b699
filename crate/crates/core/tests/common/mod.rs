#![allow(dead_code)]

use clmult_core::models::{gamma, mvn, probit, quadexp, CovariateLevel, Nuisance};
use clmult_core::simgen::{ClusterSize, Correlation, GammaDependence};
use clmult_core::{generate, ClusteredDataset, FitResult, ModelKind, ScenarioSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A small random instance of `model`, reproducible from `seed`.
pub fn small_instance(model: ModelKind, seed: u64) -> (ScenarioSpec, ClusteredDataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = rng.random_range(2..=4);
    let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mut spec = match model {
        ModelKind::Mvn => {
            let mut s = ScenarioSpec::new(model, 40, ClusterSize::Fixed(3), beta);
            s.correlation = Correlation::Exchangeable {
                sigma2: 0.8,
                rho: rng.random_range(0.0..0.6),
            };
            s
        }
        ModelKind::Probit => {
            let mut s = ScenarioSpec::new(model, 80, ClusterSize::Fixed(3), beta);
            s.correlation = Correlation::Exchangeable {
                sigma2: 1.0,
                rho: rng.random_range(0.0..0.6),
            };
            s
        }
        ModelKind::Quadexp => {
            let mut s = ScenarioSpec::new(model, 80, ClusterSize::Uniform { min: 2, max: 5 }, beta);
            s.w = rng.random_range(0.0..0.8);
            s
        }
        ModelKind::Gamma => {
            let beta = beta.iter().map(|b| b.abs()).collect();
            let mut s = ScenarioSpec::new(model, 40, ClusterSize::Fixed(3), beta);
            s.nu = rng.random_range(1.0..3.0);
            s.gamma_dependence = GammaDependence::SharedComponent {
                share: rng.random_range(0.0..0.7),
            };
            s
        }
    };
    spec.covariate_corr = rng.random_range(0.0..0.5);
    spec.seed = seed;
    let d = generate(&spec, 0).expect("generation");
    (spec, d)
}

/// Composite log-likelihood and analytic score of `fit.model` at `theta`,
/// holding nuisance parameters at their fitted values.
pub fn objective(
    fit: &FitResult,
    d: &ClusteredDataset,
    theta: &DVector<f64>,
) -> (f64, DVector<f64>) {
    match fit.model {
        ModelKind::Mvn => {
            let beta = theta.rows(0, fit.n_beta).into_owned();
            let s = match &fit.nuisance {
                Nuisance::Covariance(sigma) => sigma.diagonal(),
                _ => unreachable!(),
            };
            (
                mvn::mvn_log_cl(d, &beta, &s),
                mvn::mvn_cl_score(d, &beta, &s),
            )
        }
        ModelKind::Probit => (
            probit::probit_log_cl(d, theta),
            probit::probit_cl_score(d, theta),
        ),
        ModelKind::Quadexp => (
            quadexp::quadexp_log_cl(d, theta, CovariateLevel::Observation),
            quadexp::quadexp_cl_score(d, theta, CovariateLevel::Observation),
        ),
        ModelKind::Gamma => {
            let nu = match fit.nuisance {
                Nuisance::Dispersion { nu, .. } => nu,
                _ => unreachable!(),
            };
            (
                gamma::gamma_log_cl(d, theta, nu),
                gamma::gamma_cl_score(d, theta, nu),
            )
        }
    }
}

/// Central differences of `f` at `x` with step `h max(1, |x_k|)`.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |k, _| {
        let step = h * x[k].abs().max(1.0);
        let mut up = x.clone();
        let mut dn = x.clone();
        up[k] += step;
        dn[k] -= step;
        (f(&up) - f(&dn)) / (2.0 * step)
    })
}

/// `||a - b||_inf / max(||a||_inf, 1)`.
pub fn relative_gap(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / a.amax().max(1.0)
}

/// A random correlation matrix of size `c` from a Wishart-like draw.
pub fn random_correlation(c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let k = c + 2;
    let a = DMatrix::from_fn(c, k, |_, _| rng.random_range(-1.0f64..1.0));
    let s = &a * a.transpose() + DMatrix::identity(c, c) * 0.05;
    DMatrix::from_fn(c, c, |i, j| s[(i, j)] / (s[(i, i)] * s[(j, j)]).sqrt())
}
