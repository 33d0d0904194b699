//! Rectangle probabilities of the multivariate normal by randomized lattice
//! rules applied to the sequential-conditioning (Genz) transform.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::normal::{fast_quantile, std_normal_cdf, std_normal_pdf};
use crate::error::{Error, Result};

/// Settings for the randomized quasi-Monte Carlo integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QmcConfig {
    pub points_per_shift: usize,
    pub shifts: usize,
    pub seed: u64,
    pub target_abs_error: f64,
    pub max_doublings: usize,
}

impl Default for QmcConfig {
    fn default() -> Self {
        QmcConfig {
            points_per_shift: 4096,
            shifts: 12,
            seed: 0x5eed_0001,
            target_abs_error: 5e-4,
            max_doublings: 6,
        }
    }
}

impl QmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points_per_shift < 16 {
            return Err(Error::invalid("points_per_shift must be at least 16"));
        }
        if self.shifts < 3 {
            return Err(Error::invalid("shifts must be at least 3"));
        }
        if !(self.target_abs_error > 0.0) {
            return Err(Error::invalid("target_abs_error must be positive"));
        }
        Ok(())
    }

    /// Lighter settings for repeated use inside simulation replicates:
    /// 1024 points on each of 8 shifts, still doubling up to the same target.
    pub fn simulation() -> Self {
        QmcConfig {
            points_per_shift: 1024,
            shifts: 8,
            ..QmcConfig::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// A probability with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Lattice points per shift used for the final estimate.
    pub points: usize,
}

/// Symmetric PSD matrix with unit diagonal, after eigenvalue repair.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix(DMatrix<f64>);

const SYMMETRY_TOL: f64 = 1e-8;
const EIGEN_FLOOR: f64 = -1e-10;

impl CorrelationMatrix {
    /// Checks shape, symmetry and unit diagonal, then clips eigenvalues in
    /// `[-1e-10, 0)` to zero and rescales back to a unit diagonal. Anything
    /// more negative is rejected.
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if n == 0 || m.ncols() != n {
            return Err(Error::NotCorrelation(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotCorrelation("non-finite entry".into()));
        }
        for i in 0..n {
            if (m[(i, i)] - 1.0).abs() > SYMMETRY_TOL {
                return Err(Error::NotCorrelation(format!(
                    "diagonal entry {} is {}",
                    i + 1,
                    m[(i, i)]
                )));
            }
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::NotCorrelation(format!(
                        "asymmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        let mut sym = (m + m.transpose()) * 0.5;
        for i in 0..n {
            sym[(i, i)] = 1.0;
        }
        if n == 1 {
            return Ok(CorrelationMatrix(sym));
        }
        let eig = sym.clone().symmetric_eigen();
        let min = eig.eigenvalues.min();
        if min < EIGEN_FLOOR {
            return Err(Error::NotCorrelation(format!(
                "smallest eigenvalue {min:e} is below {EIGEN_FLOOR:e}"
            )));
        }
        if min < 0.0 {
            let clipped = eig.eigenvalues.map(|v| v.max(0.0));
            let q = &eig.eigenvectors;
            let rebuilt = q * DMatrix::from_diagonal(&clipped) * q.transpose();
            let scale: Vec<f64> = (0..n)
                .map(|i| rebuilt[(i, i)].max(f64::MIN_POSITIVE).sqrt())
                .collect();
            sym = DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    1.0
                } else {
                    (rebuilt[(i, j)] / (scale[i] * scale[j])).clamp(-1.0, 1.0)
                }
            });
        }
        Ok(CorrelationMatrix(sym))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// Conditional variance below which a coordinate is treated as a deterministic
/// function of the earlier ones.
const SINGULAR_TOL: f64 = 1e-10;

/// The ordered Cholesky factor and bounds for one rectangle.
pub(crate) struct RectangleIntegrator {
    n: usize,
    rank: usize,
    /// Row-major lower-triangular factor, `n x n`.
    l: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    d0: f64,
    e0: f64,
}

impl RectangleIntegrator {
    /// Factorizes with Genz-Bretz variable prioritization: at each step the
    /// remaining coordinate with the smallest conditional interval probability
    /// (given the expected values of those already placed) goes next.
    pub(crate) fn new(corr: &CorrelationMatrix, lower: &[f64], upper: &[f64]) -> Result<Self> {
        let n = corr.dim();
        if lower.len() != n || upper.len() != n {
            return Err(Error::dims(format!(
                "bounds of length {}/{} for a {n}x{n} correlation matrix",
                lower.len(),
                upper.len()
            )));
        }
        for i in 0..n {
            if lower[i].is_nan() || upper[i].is_nan() || !(lower[i] < upper[i]) {
                return Err(Error::invalid(format!(
                    "lower bound must be below upper bound in coordinate {}",
                    i + 1
                )));
            }
        }
        let mut r = corr.matrix().clone();
        let mut a = lower.to_vec();
        let mut b = upper.to_vec();
        let mut l = vec![0.0; n * n];
        let mut y = vec![0.0; n];
        let mut rank = 0;

        for k in 0..n {
            let mut best: Option<(usize, f64, f64, f64)> = None;
            for i in k..n {
                let row = &l[i * n..i * n + k];
                let var = r[(i, i)] - row.iter().map(|v| v * v).sum::<f64>();
                if var <= SINGULAR_TOL {
                    continue;
                }
                let s: f64 = row.iter().zip(&y[..k]).map(|(li, yi)| li * yi).sum();
                let sd = var.sqrt();
                let ai = (a[i] - s) / sd;
                let bi = (b[i] - s) / sd;
                let prob = std_normal_cdf(bi) - std_normal_cdf(ai);
                if best.is_none_or(|(_, p, _, _)| prob < p) {
                    best = Some((i, prob, ai, bi));
                }
            }
            let Some((pivot, prob, ak, bk)) = best else {
                break;
            };
            if pivot != k {
                a.swap(pivot, k);
                b.swap(pivot, k);
                r.swap_rows(pivot, k);
                r.swap_columns(pivot, k);
                for j in 0..k {
                    l.swap(pivot * n + j, k * n + j);
                }
            }
            let var = r[(k, k)] - l[k * n..k * n + k].iter().map(|v| v * v).sum::<f64>();
            let lkk = var.sqrt();
            l[k * n + k] = lkk;
            for i in k + 1..n {
                let dot: f64 = (0..k).map(|j| l[i * n + j] * l[k * n + j]).sum();
                l[i * n + k] = (r[(i, k)] - dot) / lkk;
            }
            y[k] = if prob > 1e-300 {
                (std_normal_pdf(ak) - std_normal_pdf(bk)) / prob
            } else if ak.is_finite() && bk.is_finite() {
                0.5 * (ak + bk)
            } else if ak.is_finite() {
                ak
            } else {
                bk
            };
            rank = k + 1;
        }
        if rank == 0 {
            return Err(Error::NotCorrelation("matrix has rank zero".into()));
        }
        let l00 = l[0];
        let d0 = std_normal_cdf(a[0] / l00);
        let e0 = std_normal_cdf(b[0] / l00);
        Ok(RectangleIntegrator {
            n,
            rank,
            l,
            lower: a,
            upper: b,
            d0,
            e0,
        })
    }

    /// Integration dimension: one per placed coordinate after the first, plus
    /// one more when deterministic coordinates need the last placed value.
    pub(crate) fn dims(&self) -> usize {
        if self.rank < self.n {
            self.rank
        } else {
            self.rank - 1
        }
    }

    fn eval(&self, w: &[f64], y: &mut [f64]) -> f64 {
        let n = self.n;
        let mut d = self.d0;
        let mut e = self.e0;
        let mut f = e - d;
        for k in 1..self.rank {
            if f <= 0.0 {
                return 0.0;
            }
            y[k - 1] = fast_quantile(d + w[k - 1] * (e - d));
            let row = &self.l[k * n..k * n + k];
            let s: f64 = row.iter().zip(&y[..k]).map(|(li, yi)| li * yi).sum();
            let lkk = self.l[k * n + k];
            d = std_normal_cdf((self.lower[k] - s) / lkk);
            e = std_normal_cdf((self.upper[k] - s) / lkk);
            f *= e - d;
        }
        if self.rank < n && f > 0.0 {
            let k = self.rank;
            y[k - 1] = fast_quantile(d + w[k - 1] * (e - d));
            for i in k..n {
                let s: f64 = self.l[i * n..i * n + k]
                    .iter()
                    .zip(&y[..k])
                    .map(|(li, yi)| li * yi)
                    .sum();
                if s < self.lower[i] || s > self.upper[i] {
                    return 0.0;
                }
            }
        }
        f
    }

    fn exact(&self) -> Option<f64> {
        (self.dims() == 0).then(|| (self.e0 - self.d0).clamp(0.0, 1.0))
    }
}

fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut candidate = 2u64;
    while out.len() < count {
        if out
            .iter()
            .take_while(|&&p| p * p <= candidate)
            .all(|&p| !candidate.is_multiple_of(p))
        {
            out.push(candidate);
        }
        candidate += 1;
    }
    out
}

/// Richtmyer (square roots of primes) lattice with random shifts and the
/// baker's (tent) periodization.
pub(crate) struct ShiftedLattice {
    generator: Vec<f64>,
    shifts: Vec<Vec<f64>>,
}

impl ShiftedLattice {
    pub(crate) fn new(dims: usize, shifts: usize, seed: u64) -> Self {
        let generator = primes(dims)
            .into_iter()
            .map(|p| (p as f64).sqrt().fract())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shifts = (0..shifts)
            .map(|_| (0..dims).map(|_| rng.random::<f64>()).collect())
            .collect();
        ShiftedLattice { generator, shifts }
    }

    fn dims(&self) -> usize {
        self.generator.len()
    }
}

/// Running per-shift sums so point counts can be doubled without redoing work.
pub(crate) struct Accumulator {
    sums: Vec<f64>,
    points: usize,
}

impl Accumulator {
    pub(crate) fn new(shifts: usize) -> Self {
        Accumulator {
            sums: vec![0.0; shifts],
            points: 0,
        }
    }

    pub(crate) fn extend_to(
        &mut self,
        integrator: &RectangleIntegrator,
        lattice: &ShiftedLattice,
        points: usize,
    ) {
        let dims = integrator.dims();
        debug_assert!(dims <= lattice.dims());
        let mut w = vec![0.0; dims];
        let mut y = vec![0.0; integrator.n];
        for (shift, sum) in lattice.shifts.iter().zip(self.sums.iter_mut()) {
            for k in self.points + 1..=points {
                let kf = k as f64;
                for j in 0..dims {
                    let x = (kf * lattice.generator[j] + shift[j]).fract();
                    w[j] = (2.0 * x - 1.0).abs();
                }
                *sum += integrator.eval(&w, &mut y);
            }
        }
        self.points = points;
    }

    pub(crate) fn estimate(&self) -> ProbEstimate {
        let s = self.sums.len() as f64;
        let means: Vec<f64> = self.sums.iter().map(|v| v / self.points as f64).collect();
        let mean = means.iter().sum::<f64>() / s;
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (s - 1.0);
        ProbEstimate {
            value: mean.clamp(0.0, 1.0),
            std_error: (var / s).sqrt(),
            points: self.points,
        }
    }
}

/// Fixed point count estimate (no doubling).
pub(crate) fn estimate_fixed(
    integrator: &RectangleIntegrator,
    lattice: &ShiftedLattice,
    points: usize,
) -> ProbEstimate {
    if let Some(value) = integrator.exact() {
        return ProbEstimate {
            value,
            std_error: 0.0,
            points: 0,
        };
    }
    let mut acc = Accumulator::new(lattice.shifts.len());
    acc.extend_to(integrator, lattice, points);
    acc.estimate()
}

/// Doubles the points per shift until the standard error meets the target or
/// the doubling budget runs out.
pub(crate) fn estimate_adaptive(
    integrator: &RectangleIntegrator,
    lattice: &ShiftedLattice,
    cfg: &QmcConfig,
) -> ProbEstimate {
    if let Some(value) = integrator.exact() {
        return ProbEstimate {
            value,
            std_error: 0.0,
            points: 0,
        };
    }
    let mut acc = Accumulator::new(lattice.shifts.len());
    let mut points = cfg.points_per_shift;
    for doubling in 0..=cfg.max_doublings {
        acc.extend_to(integrator, lattice, points);
        let est = acc.estimate();
        if est.std_error <= cfg.target_abs_error || doubling == cfg.max_doublings {
            return est;
        }
        points *= 2;
    }
    unreachable!("loop always returns on the final doubling")
}

/// `P(lower < Z < upper)` for `Z ~ N(0, corr)`. Infinite bounds are allowed.
pub fn mvn_rectangle_prob(
    lower: &[f64],
    upper: &[f64],
    corr: &DMatrix<f64>,
    cfg: &QmcConfig,
) -> Result<ProbEstimate> {
    cfg.validate()?;
    let corr = CorrelationMatrix::new(corr)?;
    let integrator = RectangleIntegrator::new(&corr, lower, upper)?;
    let lattice = ShiftedLattice::new(integrator.dims(), cfg.shifts, cfg.seed);
    Ok(estimate_adaptive(&integrator, &lattice, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mvn::normal::std_normal_cdf;

    fn exchangeable(n: usize, rho: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { rho })
    }

    #[test]
    fn univariate_matches_cdf() {
        let cfg = QmcConfig::default();
        let est = mvn_rectangle_prob(&[-1.96], &[1.96], &exchangeable(1, 0.0), &cfg).unwrap();
        let want = std_normal_cdf(1.96) - std_normal_cdf(-1.96);
        assert!((est.value - want).abs() < 1e-14);
        assert!((est.value - 0.95).abs() < 1e-4);
    }

    #[test]
    fn independent_pair_factorizes() {
        let cfg = QmcConfig::default();
        let est = mvn_rectangle_prob(&[-1.96; 2], &[1.96; 2], &exchangeable(2, 0.0), &cfg).unwrap();
        let m = std_normal_cdf(1.96) - std_normal_cdf(-1.96);
        assert!((est.value - m * m).abs() < 1e-12);
        assert!((est.value - 0.9025).abs() < 1e-4);
    }

    #[test]
    fn infinite_box_is_one() {
        let cfg = QmcConfig::default();
        let inf = f64::INFINITY;
        let est = mvn_rectangle_prob(&[-inf; 4], &[inf; 4], &exchangeable(4, 0.3), &cfg).unwrap();
        assert!((est.value - 1.0).abs() <= est.std_error + 1e-12);
    }

    #[test]
    fn singular_matrix_uses_deterministic_coordinates() {
        // Z3 = Z1 exactly: P(|Z1|<1, |Z2|<1, |Z3|<1) = P(|Z1|<1) P(|Z2|<1).
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let cfg = QmcConfig::default();
        let est = mvn_rectangle_prob(&[-1.0; 3], &[1.0; 3], &m, &cfg).unwrap();
        let p = std_normal_cdf(1.0) - std_normal_cdf(-1.0);
        assert!((est.value - p * p).abs() < 2e-3, "{est:?}");
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = QmcConfig {
            points_per_shift: 256,
            ..QmcConfig::default()
        };
        let m = exchangeable(5, 0.4);
        let a = mvn_rectangle_prob(&[-2.0; 5], &[2.0; 5], &m, &cfg).unwrap();
        let b = mvn_rectangle_prob(&[-2.0; 5], &[2.0; 5], &m, &cfg).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = QmcConfig::default();
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 1.5, 1.5, 1.0]);
        assert!(matches!(
            mvn_rectangle_prob(&[-1.0; 2], &[1.0; 2], &bad, &cfg),
            Err(Error::NotCorrelation(_))
        ));
        assert!(mvn_rectangle_prob(&[-1.0; 3], &[1.0; 3], &exchangeable(2, 0.1), &cfg).is_err());
        assert!(mvn_rectangle_prob(&[1.0; 2], &[1.0; 2], &exchangeable(2, 0.1), &cfg).is_err());
        let cfg_bad = QmcConfig { shifts: 2, ..cfg };
        assert!(cfg_bad.validate().is_err());
    }

    #[test]
    fn tiny_negative_eigenvalue_is_repaired() {
        let mut m = exchangeable(3, 1.0);
        m[(0, 1)] = 1.0 + 1e-12;
        m[(1, 0)] = 1.0 + 1e-12;
        let c = CorrelationMatrix::new(&m).unwrap();
        assert!(c.matrix().iter().all(|v| v.abs() <= 1.0));
    }
}
