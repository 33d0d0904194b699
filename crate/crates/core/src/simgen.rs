//! Seeded generators for clustered datasets under each model, and the exact
//! enumeration table of the quadratic exponential model.
//!
//! A dataset is a pure function of `(spec, replicate)`: the spec seed picks a
//! ChaCha8 key and the replicate index picks the stream, so replicates can be
//! generated in any order on any number of threads.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Cluster, ClusteredDataset, ResponseKind};
use crate::error::{Error, Result};
use crate::models::{CovariateLevel, ModelKind};
use crate::numeric::symmetrize;

/// Largest cluster the enumeration sampler and oracle accept.
pub const MAX_ENUMERATION_SIZE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterSize {
    Fixed(usize),
    /// Uniform on `min..=max`, drawn per cluster.
    Uniform {
        min: usize,
        max: usize,
    },
}

impl ClusterSize {
    pub fn max(self) -> usize {
        match self {
            ClusterSize::Fixed(m) => m,
            ClusterSize::Uniform { max, .. } => max,
        }
    }

    fn draw(self, rng: &mut ChaCha8Rng) -> usize {
        match self {
            ClusterSize::Fixed(m) => m,
            ClusterSize::Uniform { min, max } => rng.random_range(min..=max),
        }
    }
}

/// Within-cluster error structure (latent scale for probit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correlation {
    None,
    Exchangeable {
        sigma2: f64,
        rho: f64,
    },
    /// Covariance given row by row; symmetrized as `(S + S^T) / 2` before use.
    Unstructured(Vec<Vec<f64>>),
}

/// How correlated gamma responses are built from independent components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaDependence {
    Independent,
    /// `G_j = g_0 + g_j` with `g_0 ~ Gamma(share nu)` common to the cluster and
    /// `g_j ~ Gamma((1 - share) nu)`; within-cluster correlation is `share`.
    SharedComponent {
        share: f64,
    },
    /// `G = K g` for a zero-one incidence matrix `K` (m x q) and component
    /// shapes `gamma1` with `K gamma1 = nu 1`.
    Incidence {
        k: Vec<Vec<f64>>,
        shapes: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub model: ModelKind,
    pub n: usize,
    pub m: ClusterSize,
    pub p: usize,
    pub beta: Vec<f64>,
    #[serde(default = "no_correlation")]
    pub correlation: Correlation,
    /// Quadratic exponential interaction on the `w = 2 w*` scale.
    #[serde(default)]
    pub w: f64,
    /// Gamma shape.
    #[serde(default = "unit")]
    pub nu: f64,
    #[serde(default = "independent")]
    pub gamma_dependence: GammaDependence,
    /// Correlation between covariate entries of the same column within a
    /// cluster. Zero gives iid standard normal covariates.
    #[serde(default)]
    pub covariate_corr: f64,
    /// Standard deviation of every covariate entry.
    #[serde(default = "unit")]
    pub covariate_sd: f64,
    /// Quadratic exponential main effects per observation or per cluster.
    #[serde(default)]
    pub covariate_level: CovariateLevel,
    /// When set, every replicate reuses the covariates drawn from this seed.
    #[serde(default)]
    pub design_seed: Option<u64>,
    #[serde(default)]
    pub seed: u64,
}

fn no_correlation() -> Correlation {
    Correlation::None
}

fn unit() -> f64 {
    1.0
}

fn independent() -> GammaDependence {
    GammaDependence::Independent
}

impl ScenarioSpec {
    /// A spec with no correlation, `w = 0`, `nu = 1` and iid covariates.
    pub fn new(model: ModelKind, n: usize, m: ClusterSize, beta: Vec<f64>) -> Self {
        ScenarioSpec {
            model,
            n,
            m,
            p: beta.len(),
            beta,
            correlation: Correlation::None,
            w: 0.0,
            nu: 1.0,
            gamma_dependence: GammaDependence::Independent,
            covariate_corr: 0.0,
            covariate_sd: 1.0,
            covariate_level: CovariateLevel::Observation,
            design_seed: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid("a scenario needs at least 2 clusters"));
        }
        if self.p == 0 || self.beta.len() != self.p {
            return Err(Error::dims(format!(
                "beta has {} entries but p = {}",
                self.beta.len(),
                self.p
            )));
        }
        match self.m {
            ClusterSize::Fixed(0) => return Err(Error::invalid("cluster size must be positive")),
            ClusterSize::Uniform { min, max } if min == 0 || min > max => {
                return Err(Error::invalid(format!(
                    "bad cluster size range {min}..={max}"
                )))
            }
            _ => {}
        }
        if self.model == ModelKind::Mvn && !matches!(self.m, ClusterSize::Fixed(_)) {
            return Err(Error::Unsupported(
                "multivariate normal scenarios need a fixed cluster size".into(),
            ));
        }
        if self.model == ModelKind::Quadexp && self.m.max() > MAX_ENUMERATION_SIZE {
            return Err(Error::invalid(format!(
                "quadratic exponential clusters are limited to {MAX_ENUMERATION_SIZE} observations"
            )));
        }
        if let Correlation::Exchangeable { sigma2, rho } = self.correlation {
            if !(sigma2 > 0.0) || !(rho.abs() < 1.0) {
                return Err(Error::invalid(format!(
                    "exchangeable structure needs sigma2 > 0 and |rho| < 1, got ({sigma2}, {rho})"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.covariate_corr) {
            return Err(Error::invalid("covariate_corr must lie in [0, 1)"));
        }
        if !(self.covariate_sd > 0.0 && self.covariate_sd.is_finite()) {
            return Err(Error::invalid("covariate_sd must be positive"));
        }
        if self.model == ModelKind::Gamma && !(self.nu > 0.0) {
            return Err(Error::invalid("gamma shape nu must be positive"));
        }
        if !self
            .beta
            .iter()
            .chain([&self.w, &self.nu])
            .all(|v| v.is_finite())
        {
            return Err(Error::invalid("scenario parameters must be finite"));
        }
        Ok(())
    }

    fn rng(&self, replicate: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(replicate);
        rng
    }
}

/// Dense matrix from equal-length rows.
pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::dims(
            "matrix rows must be non-empty and of equal length",
        ));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Covariance of the error (or latent) vector for a cluster of size `m`.
pub fn error_covariance(corr: &Correlation, m: usize) -> Result<DMatrix<f64>> {
    let s = match corr {
        Correlation::None => DMatrix::identity(m, m),
        Correlation::Exchangeable { sigma2, rho } => {
            DMatrix::from_fn(m, m, |i, j| if i == j { *sigma2 } else { sigma2 * rho })
        }
        Correlation::Unstructured(rows) => {
            let s = rows_to_matrix(rows)?;
            if s.nrows() != m || s.ncols() != m {
                return Err(Error::dims(format!(
                    "unstructured covariance is {}x{} but clusters have size {m}",
                    s.nrows(),
                    s.ncols()
                )));
            }
            symmetrize(&s)
        }
    };
    Ok(s)
}

fn cholesky_factor(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    s.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NotCorrelation("error covariance is not positive definite".into()))
}

fn normal_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

fn covariates(spec: &ScenarioSpec, m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (k, sd) = (spec.covariate_corr, spec.covariate_sd);
    if k == 0.0 {
        return DMatrix::from_fn(m, spec.p, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
    }
    let shared = normal_vector(rng, spec.p);
    let (a, b) = (sd * k.sqrt(), sd * (1.0 - k).sqrt());
    DMatrix::from_fn(m, spec.p, |_, j| {
        a * shared[j] + b * rng.sample::<f64, _>(StandardNormal)
    })
}

/// Cluster sizes and covariate matrices for one replicate.
fn designs(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Vec<DMatrix<f64>> {
    let mut design_rng = spec.design_seed.map(|s| {
        let mut r = ChaCha8Rng::seed_from_u64(s);
        r.set_stream(u64::MAX);
        r
    });
    (0..spec.n)
        .map(|_| {
            let src = design_rng.as_mut().unwrap_or(&mut *rng);
            let m = spec.m.draw(src);
            covariates(spec, m, src)
        })
        .collect()
}

/// Generates replicate `replicate` of `spec`.
pub fn generate(spec: &ScenarioSpec, replicate: u64) -> Result<ClusteredDataset> {
    match spec.model {
        ModelKind::Mvn => gen_mvn(spec, replicate),
        ModelKind::Probit => gen_probit(spec, replicate),
        ModelKind::Quadexp => gen_quadexp(spec, replicate),
        ModelKind::Gamma => gen_gamma(spec, replicate),
    }
}

fn beta_vec(spec: &ScenarioSpec) -> DVector<f64> {
    DVector::from_column_slice(&spec.beta)
}

fn assemble(
    xs: Vec<DMatrix<f64>>,
    ys: Vec<DVector<f64>>,
    kind: ResponseKind,
    p: usize,
) -> ClusteredDataset {
    let clusters = xs
        .into_iter()
        .zip(ys)
        .enumerate()
        .map(|(i, (x, y))| Cluster::new(format!("{}", i + 1), y, x))
        .collect();
    ClusteredDataset::new(clusters, kind, p)
}

/// `y_i = X_i beta + e_i`, `e_i ~ N(0, Sigma)`.
pub fn gen_mvn(spec: &ScenarioSpec, replicate: u64) -> Result<ClusteredDataset> {
    spec.validate()?;
    let mut rng = spec.rng(replicate);
    let xs = designs(spec, &mut rng);
    let m = spec.m.max();
    let l = cholesky_factor(&error_covariance(&spec.correlation, m)?)?;
    let beta = beta_vec(spec);
    let ys = xs
        .iter()
        .map(|x| x * &beta + &l * normal_vector(&mut rng, m))
        .collect();
    Ok(assemble(xs, ys, ResponseKind::Continuous, spec.p))
}

/// Dichotomized latent normal: `y_ij = 1{x_ij beta + e_ij > 0}` with `e_i`
/// having unit variances and the scenario's correlation.
pub fn gen_probit(spec: &ScenarioSpec, replicate: u64) -> Result<ClusteredDataset> {
    spec.validate()?;
    let corr = match &spec.correlation {
        Correlation::Exchangeable { rho, .. } => Correlation::Exchangeable {
            sigma2: 1.0,
            rho: *rho,
        },
        other => other.clone(),
    };
    let mut rng = spec.rng(replicate);
    let xs = designs(spec, &mut rng);
    let beta = beta_vec(spec);
    let mut factors: Vec<Option<DMatrix<f64>>> = vec![None; spec.m.max() + 1];
    let mut ys = Vec::with_capacity(xs.len());
    for x in &xs {
        let m = x.nrows();
        if factors[m].is_none() {
            factors[m] = Some(cholesky_factor(&error_covariance(&corr, m)?)?);
        }
        let l = factors[m].as_ref().unwrap();
        let latent = x * &beta + l * normal_vector(&mut rng, m);
        ys.push(latent.map(|v| if v > 0.0 { 1.0 } else { 0.0 }));
    }
    Ok(assemble(xs, ys, ResponseKind::Binary01, spec.p))
}

/// Normalized probabilities of every -1/+1 configuration of one cluster
/// under `f(y) ∝ exp{sum_j mu*_j y_j + w* sum_{j<k} y_j y_k}` with
/// `mu*_j = mu_j / 2`, `w* = w / 2`. Bit `j` of the index set means
/// `y_j = +1`.
pub fn enumeration_table(mu: &[f64], w: f64) -> Result<Vec<f64>> {
    let m = mu.len();
    if m == 0 || m > MAX_ENUMERATION_SIZE {
        return Err(Error::invalid(format!(
            "enumeration needs 1 <= m <= {MAX_ENUMERATION_SIZE}, got {m}"
        )));
    }
    let ws = 0.5 * w;
    let mut logw: Vec<f64> = (0..1usize << m)
        .map(|cfg| {
            let mut main = 0.0;
            let mut plus = 0i64;
            for (j, mu_j) in mu.iter().enumerate() {
                if cfg >> j & 1 == 1 {
                    main += 0.5 * mu_j;
                    plus += 1;
                } else {
                    main -= 0.5 * mu_j;
                }
            }
            // sum_{j<k} y_j y_k = (S^2 - m) / 2 with S = sum_j y_j.
            let s = 2 * plus - m as i64;
            main + ws * ((s * s - m as i64) as f64) / 2.0
        })
        .collect();
    let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in logw.iter_mut() {
        *v = (*v - top).exp();
        total += *v;
    }
    for v in logw.iter_mut() {
        *v /= total;
    }
    Ok(logw)
}

/// Full probability table of one cluster with covariates `x` (m x p).
pub fn quadexp_enumeration_oracle(
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    w: f64,
) -> Result<Vec<f64>> {
    if x.ncols() != beta.len() {
        return Err(Error::dims(format!(
            "x has {} columns but beta has {} entries",
            x.ncols(),
            beta.len()
        )));
    }
    let mu = x * beta;
    enumeration_table(mu.as_slice(), w)
}

/// Configuration index of a -1/+1 vector.
pub fn configuration_index(y: &[f64]) -> usize {
    y.iter()
        .enumerate()
        .filter(|(_, v)| **v > 0.0)
        .map(|(j, _)| 1usize << j)
        .sum()
}

/// `log f(y_j | y_(-j))` for every `j`, by marginalizing the exact table.
pub fn enumeration_conditional_log_probs(table: &[f64], y: &[f64]) -> Vec<f64> {
    let idx = configuration_index(y);
    (0..y.len())
        .map(|j| {
            let own = table[idx];
            let flipped = table[idx ^ (1 << j)];
            own.ln() - (own + flipped).ln()
        })
        .collect()
}

fn draw_configuration(table: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in table.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    table.len() - 1
}

/// Exact sampling from the quadratic exponential model by enumeration.
pub fn gen_quadexp(spec: &ScenarioSpec, replicate: u64) -> Result<ClusteredDataset> {
    spec.validate()?;
    let mut rng = spec.rng(replicate);
    let xs = designs(spec, &mut rng);
    let beta = beta_vec(spec);
    let mut ys = Vec::with_capacity(xs.len());
    for x in &xs {
        let m = x.nrows();
        let mu = match spec.covariate_level {
            CovariateLevel::Observation => x * &beta,
            CovariateLevel::ClusterMean => {
                DVector::from_element(m, x.row_mean().dot(&beta.transpose()))
            }
        };
        let table = enumeration_table(mu.as_slice(), spec.w)?;
        let cfg = draw_configuration(&table, &mut rng);
        ys.push(DVector::from_fn(m, |j, _| {
            if cfg >> j & 1 == 1 {
                1.0
            } else {
                -1.0
            }
        }));
    }
    Ok(assemble(xs, ys, ResponseKind::BinaryPm1, spec.p))
}

fn gamma_draw(shape: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    if shape == 0.0 {
        return Ok(0.0);
    }
    Gamma::new(shape, 1.0)
        .map(|g| g.sample(rng))
        .map_err(|e| Error::invalid(format!("gamma shape {shape}: {e}")))
}

/// Checks that `K` is zero-one and of full rank and that `K shapes = nu 1`.
pub fn check_incidence(k: &DMatrix<f64>, shapes: &DVector<f64>, nu: f64) -> Result<()> {
    if k.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::invalid("incidence matrix entries must be 0 or 1"));
    }
    if shapes.len() != k.ncols() || shapes.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::invalid(
            "component shapes must be non-negative, one per column of K",
        ));
    }
    let rank = k.clone().svd(false, false).rank(1e-10);
    if rank < k.nrows().min(k.ncols()) {
        return Err(Error::invalid("incidence matrix is not of full rank"));
    }
    let margins = k * shapes;
    if margins.iter().any(|a| (a - nu).abs() > 1e-10 * nu.max(1.0)) {
        return Err(Error::invalid(format!(
            "incidence construction gives marginal shapes {:?}, expected {nu}",
            margins.as_slice()
        )));
    }
    Ok(())
}

/// Gamma responses with mean `exp(x_ij beta)` and marginal shape `nu`.
pub fn gen_gamma(spec: &ScenarioSpec, replicate: u64) -> Result<ClusteredDataset> {
    spec.validate()?;
    let nu = spec.nu;
    match &spec.gamma_dependence {
        GammaDependence::SharedComponent { share } if !(0.0..=1.0).contains(share) => {
            return Err(Error::invalid("shared-component share must lie in [0, 1]"));
        }
        GammaDependence::Incidence { k, shapes } => {
            check_incidence(&rows_to_matrix(k)?, &DVector::from_column_slice(shapes), nu)?;
            if k.len() != spec.m.max() || !matches!(spec.m, ClusterSize::Fixed(_)) {
                return Err(Error::dims(
                    "incidence matrix rows must equal the fixed cluster size",
                ));
            }
        }
        _ => {}
    }
    let incidence = match &spec.gamma_dependence {
        GammaDependence::Incidence { k, .. } => Some(rows_to_matrix(k)?),
        _ => None,
    };
    let mut rng = spec.rng(replicate);
    let xs = designs(spec, &mut rng);
    let beta = beta_vec(spec);
    let mut ys = Vec::with_capacity(xs.len());
    for x in &xs {
        let m = x.nrows();
        let base: DVector<f64> = match &spec.gamma_dependence {
            GammaDependence::Independent => DVector::from_iterator(
                m,
                (0..m)
                    .map(|_| gamma_draw(nu, &mut rng))
                    .collect::<Result<Vec<_>>>()?,
            ),
            GammaDependence::SharedComponent { share } => {
                let common = gamma_draw(share * nu, &mut rng)?;
                let own = (0..m)
                    .map(|_| gamma_draw((1.0 - share) * nu, &mut rng))
                    .collect::<Result<Vec<_>>>()?;
                DVector::from_iterator(m, own.into_iter().map(|g| common + g))
            }
            GammaDependence::Incidence { shapes, .. } => {
                let g = shapes
                    .iter()
                    .map(|s| gamma_draw(*s, &mut rng))
                    .collect::<Result<Vec<_>>>()?;
                incidence.as_ref().expect("checked above") * DVector::from_vec(g)
            }
        };
        let mu = (x * &beta).map(f64::exp);
        // Each base entry is Gamma(nu, 1); rescale to mean mu.
        ys.push(base.component_mul(&mu) / nu);
    }
    Ok(assemble(xs, ys, ResponseKind::Positive, spec.p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mvn_spec() -> ScenarioSpec {
        let mut s = ScenarioSpec::new(ModelKind::Mvn, 50, ClusterSize::Fixed(4), vec![0.0; 3]);
        s.correlation = Correlation::Exchangeable {
            sigma2: 0.8,
            rho: 0.5,
        };
        s.seed = 7;
        s
    }

    #[test]
    fn generation_is_deterministic() {
        let s = mvn_spec();
        assert_eq!(generate(&s, 3).unwrap(), generate(&s, 3).unwrap());
        assert_ne!(generate(&s, 3).unwrap(), generate(&s, 4).unwrap());
    }

    #[test]
    fn fixed_design_reuses_covariates() {
        let mut s = mvn_spec();
        s.design_seed = Some(11);
        let a = generate(&s, 0).unwrap();
        let b = generate(&s, 1).unwrap();
        assert_eq!(a.clusters()[5].x, b.clusters()[5].x);
        assert_ne!(a.clusters()[5].y, b.clusters()[5].y);
    }

    #[test]
    fn table_four_covariance_after_symmetrizing_is_positive_definite() {
        let raw = vec![
            vec![1.3, 0.9, 0.5, 0.3],
            vec![0.9, 1.9, 1.3, 0.3],
            vec![0.5, 1.3, 1.3, 0.1],
            vec![0.3, 0.9, 0.1, 0.7],
        ];
        let s = error_covariance(&Correlation::Unstructured(raw), 4).unwrap();
        assert_eq!(s[(1, 3)], 0.6);
        assert!(cholesky_factor(&s).is_ok());
    }

    #[test]
    fn enumeration_single_site() {
        let t = enumeration_table(&[0.8], 0.3).unwrap();
        let p_plus = 1.0 / (1.0 + (-0.8f64).exp());
        assert!((t[1] - p_plus).abs() < 1e-15);
        assert!((t[0] + t[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn enumeration_depends_on_count_only_for_constant_mu() {
        let t = enumeration_table(&[0.4; 5], -0.7).unwrap();
        for a in 0..32usize {
            for b in 0..32usize {
                if a.count_ones() == b.count_ones() {
                    assert!((t[a] - t[b]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn enumeration_rejects_large_clusters() {
        assert!(enumeration_table(&[0.0; 21], 0.0).is_err());
    }

    #[test]
    fn incidence_checks() {
        let k = DMatrix::from_row_slice(
            3,
            4,
            &[1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0],
        );
        let shapes = DVector::from_row_slice(&[0.5, 0.5, 0.5, 0.5]);
        assert!(check_incidence(&k, &shapes, 1.0).is_ok());
        assert!(check_incidence(&k, &shapes, 2.0).is_err());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(check_incidence(&bad, &DVector::from_row_slice(&[0.5, 0.5]), 1.0).is_err());
    }
}
