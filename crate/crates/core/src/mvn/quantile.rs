//! Equicoordinate, chi-square and studentized-range quantiles.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use super::normal::{quantile_unchecked, std_normal_cdf, std_normal_pdf};
use super::qmc::{
    estimate_adaptive, estimate_fixed, CorrelationMatrix, ProbEstimate, QmcConfig,
    RectangleIntegrator, ShiftedLattice,
};
use crate::error::{Error, Result};
use crate::numeric::{brent, integrate};

fn check_level(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// Result of an equicoordinate quantile search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquicoordinateQuantile {
    pub cutoff: f64,
    /// `P(max |Z_i| <= cutoff)` as estimated at the returned cutoff.
    pub coverage: ProbEstimate,
}

/// Largest allowed gap between the estimated coverage and `1 - alpha`, and
/// the largest allowed standard error of that estimate.
pub const QUANTILE_PROB_TOL: f64 = 1e-3;

/// Cutoff `q` with `P(max_i |Z_i| <= q) = 1 - alpha` for `Z ~ N(0, corr)`.
pub fn equicoordinate_quantile(corr: &DMatrix<f64>, alpha: f64, cfg: &QmcConfig) -> Result<f64> {
    equicoordinate_quantile_detailed(corr, alpha, cfg).map(|q| q.cutoff)
}

/// Like [`equicoordinate_quantile`] but also returns the coverage estimate.
///
/// The root is searched on `[z_{1-a/2}, z_{1-(1-(1-a)^{1/c})/2}]`; the upper
/// end is the Dunn-Sidak cutoff, which always over-covers for symmetric slabs,
/// and the Bonferroni cutoff is tried if noise makes it look otherwise. All
/// evaluations inside one search share the same lattice and shifts, so the
/// estimated coverage is a smooth increasing function of the cutoff.
pub fn equicoordinate_quantile_detailed(
    corr: &DMatrix<f64>,
    alpha: f64,
    cfg: &QmcConfig,
) -> Result<EquicoordinateQuantile> {
    check_level(alpha)?;
    cfg.validate()?;
    let corr = CorrelationMatrix::new(corr)?;
    let c = corr.dim();
    let target = 1.0 - alpha;
    let lower = quantile_unchecked(1.0 - alpha / 2.0);
    if c == 1 {
        let p = std_normal_cdf(lower) - std_normal_cdf(-lower);
        return Ok(EquicoordinateQuantile {
            cutoff: lower,
            coverage: ProbEstimate {
                value: p,
                std_error: 0.0,
                points: 0,
            },
        });
    }
    let cf = c as f64;
    let sidak = quantile_unchecked(1.0 - (1.0 - target.powf(1.0 / cf)) / 2.0);
    let bonferroni = quantile_unchecked(1.0 - alpha / (2.0 * cf));
    let z_target = quantile_unchecked(target);

    let lattice = ShiftedLattice::new(c, cfg.shifts, cfg.seed);
    let integrator_at = |q: f64| RectangleIntegrator::new(&corr, &vec![-q; c], &vec![q; c]);

    // Fix the point count from the adaptive run at the Sidak end.
    let first = estimate_adaptive(&integrator_at(sidak)?, &lattice, cfg);
    let mut points = first.points.max(cfg.points_per_shift);

    let mut doublings_left = cfg
        .max_doublings
        .saturating_sub((points / cfg.points_per_shift).max(1).ilog2() as usize);
    let mut seen: Vec<(f64, ProbEstimate)> = vec![(sidak, first)];
    loop {
        // Brent's last iterate and the Sidak end are usually evaluated twice.
        let cache = std::cell::RefCell::new(std::mem::take(&mut seen));
        let coverage = |q: f64| -> Result<ProbEstimate> {
            if let Some(&(_, p)) = cache
                .borrow()
                .iter()
                .find(|(x, p)| *x == q && p.points == points)
            {
                return Ok(p);
            }
            let p = estimate_fixed(&integrator_at(q)?, &lattice, points);
            cache.borrow_mut().push((q, p));
            Ok(p)
        };
        let score = |p: ProbEstimate| quantile_unchecked(p.value) - z_target;

        let p_lo = coverage(lower)?;
        if p_lo.value >= target {
            return Ok(EquicoordinateQuantile {
                cutoff: lower,
                coverage: p_lo,
            });
        }
        let mut hi = sidak;
        let mut p_hi = coverage(hi)?;
        if p_hi.value < target {
            hi = bonferroni;
            p_hi = coverage(hi)?;
            let mut widen = 0;
            while p_hi.value < target {
                widen += 1;
                if widen > 20 {
                    return Err(Error::NonConvergence {
                        what: "equicoordinate quantile bracketing".into(),
                        iterations: widen,
                    });
                }
                hi += 0.05;
                p_hi = coverage(hi)?;
            }
        }
        let root = brent(
            |q| coverage(q).map(score),
            lower,
            hi,
            score(p_lo),
            score(p_hi),
            1e-7,
            100,
        )?;
        let at_root = coverage(root.root)?;
        let close = (at_root.value - target).abs() <= QUANTILE_PROB_TOL;
        if close && at_root.std_error <= cfg.target_abs_error {
            return Ok(EquicoordinateQuantile {
                cutoff: root.root,
                coverage: at_root,
            });
        }
        if doublings_left == 0 {
            if close && at_root.std_error <= QUANTILE_PROB_TOL {
                return Ok(EquicoordinateQuantile {
                    cutoff: root.root,
                    coverage: at_root,
                });
            }
            return Err(Error::NonConvergence {
                what: format!(
                    "equicoordinate quantile (standard error {:.2e} at {} points per shift)",
                    at_root.std_error, points
                ),
                iterations: cfg.max_doublings,
            });
        }
        doublings_left -= 1;
        points *= 2;
    }
}

/// Regularized chi-square CDF.
pub fn chi_square_cdf(df: usize, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(df as f64 / 2.0, x / 2.0)
    }
}

fn chi_square_log_pdf(df: f64, x: f64) -> f64 {
    let k = df / 2.0;
    (k - 1.0) * x.ln() - x / 2.0 - k * std::f64::consts::LN_2 - ln_gamma(k)
}

/// Inverse chi-square CDF by safeguarded Newton iteration from the
/// Wilson-Hilferty approximation.
pub fn chi_square_quantile(df: usize, p: f64) -> Result<f64> {
    if df == 0 {
        return Err(Error::invalid(
            "chi-square degrees of freedom must be at least 1",
        ));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!(
            "chi-square quantile needs 0 < p < 1, got {p}"
        )));
    }
    if df == 2 {
        return Ok(-2.0 * (-p).ln_1p());
    }
    let k = df as f64;
    let z = quantile_unchecked(p);
    let h = 2.0 / (9.0 * k);
    let mut x = (k * (1.0 - h + z * h.sqrt()).powi(3)).max(1e-8);
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    for _ in 0..200 {
        let f = chi_square_cdf(df, x) - p;
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let step = f / chi_square_log_pdf(k, x).exp();
        let mut next = x - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                2.0 * x.max(1.0)
            };
        }
        if (next - x).abs() <= 1e-15 * x.max(1e-300) {
            return Ok(next);
        }
        x = next;
    }
    Err(Error::NonConvergence {
        what: "chi-square quantile".into(),
        iterations: 200,
    })
}

/// CDF of the range of `k` iid standard normals:
/// `k * integral phi(z) [Phi(z) - Phi(z - q)]^(k-1) dz`.
pub fn studentized_range_cdf(k: usize, q: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    let km1 = (k - 1) as i32;
    let kf = k as f64;
    let v = integrate(
        |z| std_normal_pdf(z) * (std_normal_cdf(z) - std_normal_cdf(z - q)).powi(km1),
        -9.0,
        9.0 + q.min(9.0),
        1e-13,
    );
    (kf * v).clamp(0.0, 1.0)
}

/// Upper `alpha` quantile of the studentized range with infinite degrees of
/// freedom, `q_{k, inf; alpha}`.
pub fn studentized_range_quantile(k: usize, alpha: f64) -> Result<f64> {
    if k < 2 {
        return Err(Error::invalid("studentized range needs k >= 2"));
    }
    check_level(alpha)?;
    let target = 1.0 - alpha;
    let sqrt2 = std::f64::consts::SQRT_2;
    let pairs = (k * (k - 1)) as f64;
    // Range of two is sqrt(2)|Z|; the pairwise union bound gives the top end.
    let lo = 0.999 * sqrt2 * quantile_unchecked(1.0 - alpha / 2.0);
    let hi = 1.001 * sqrt2 * quantile_unchecked(1.0 - alpha / pairs) + 1e-6;
    let f = |q: f64| Ok(studentized_range_cdf(k, q) - target);
    let root = brent(f, lo, hi, f(lo)?, f(hi)?, 1e-10, 200)?;
    if root.f_root.abs() > 1e-4 {
        return Err(Error::NonConvergence {
            what: "studentized range quantile".into(),
            iterations: root.evaluations,
        });
    }
    Ok(root.root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mvn::normal::std_normal_quantile;

    fn exchangeable(n: usize, rho: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { rho })
    }

    #[test]
    fn single_coordinate_is_two_sided_normal() {
        let q =
            equicoordinate_quantile(&exchangeable(1, 0.0), 0.05, &QmcConfig::default()).unwrap();
        assert!((q - 1.959964).abs() < 1e-6);
    }

    #[test]
    fn identity_matches_sidak() {
        let q =
            equicoordinate_quantile(&exchangeable(10, 0.0), 0.05, &QmcConfig::default()).unwrap();
        let sidak = std_normal_quantile(1.0 - (1.0 - 0.95f64.powf(0.1)) / 2.0).unwrap();
        assert!((q - sidak).abs() < 1e-3, "{q} vs {sidak}");
    }

    #[test]
    fn positive_dependence_lowers_cutoff() {
        let cfg = QmcConfig::default();
        let ind = equicoordinate_quantile(&exchangeable(10, 0.0), 0.05, &cfg).unwrap();
        let dep = equicoordinate_quantile_detailed(&exchangeable(10, 0.5), 0.05, &cfg).unwrap();
        assert!(dep.cutoff < ind);
        assert!((dep.coverage.value - 0.95).abs() < 1e-3);
    }

    #[test]
    fn chi_square_closed_forms() {
        let z = std_normal_quantile(0.975).unwrap();
        let q1 = chi_square_quantile(1, 0.95).unwrap();
        assert!((q1 - z * z).abs() < 1e-8 * q1);
        assert!((q1 - 3.841459).abs() < 1e-6);
        let q2 = chi_square_quantile(2, 0.95).unwrap();
        assert!((q2 - 5.991465).abs() < 1e-6);
        assert!((q2 + 2.0 * 0.05f64.ln()).abs() < 1e-12);
        assert!(chi_square_quantile(3, 0.0).is_err());
        assert!(chi_square_quantile(3, 1.0).is_err());
    }

    #[test]
    fn range_of_two() {
        let q = studentized_range_quantile(2, 0.05).unwrap();
        let want = std::f64::consts::SQRT_2 * 1.959963984540054;
        assert!((q - want).abs() < 1e-6, "{q}");
        assert!((q - 2.7718).abs() < 1e-4);
    }

    #[test]
    fn range_quantile_increases_with_k() {
        let qs: Vec<f64> = (2..=8)
            .map(|k| studentized_range_quantile(k, 0.05).unwrap())
            .collect();
        assert!(qs.windows(2).all(|w| w[0] < w[1]), "{qs:?}");
    }

    #[test]
    fn range_errors() {
        assert!(studentized_range_quantile(1, 0.05).is_err());
        assert!(studentized_range_quantile(3, 1.0).is_err());
    }
}
