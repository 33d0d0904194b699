//! Univariate standard normal functions.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn std_normal_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn std_normal_log_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Standard normal CDF, evaluated through `erfc` so the lower tail keeps full
/// relative precision down to the subnormal range.
pub fn std_normal_cdf(z: f64) -> f64 {
    if z == f64::INFINITY {
        1.0
    } else if z == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * erfc(-z * FRAC_1_SQRT_2)
    }
}

/// Upper tail `1 - Phi(z)` without cancellation.
pub fn std_normal_sf(z: f64) -> f64 {
    std_normal_cdf(-z)
}

/// `ln Phi(z)`, finite for every finite `z`.
pub fn std_normal_log_cdf(z: f64) -> f64 {
    if z > 5.0 {
        (-std_normal_sf(z)).ln_1p()
    } else if z > -37.0 {
        std_normal_cdf(z).ln()
    } else if z == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        // Asymptotic Mills-ratio series; truncation error below 1e-16 for z < -37.
        let z2 = z * z;
        let inv = 1.0 / z2;
        let series = 1.0 - inv * (1.0 - 3.0 * inv * (1.0 - 5.0 * inv * (1.0 - 7.0 * inv)));
        -0.5 * z2 - (-z).ln() - LN_SQRT_2PI + series.ln()
    }
}

/// `phi(z) / Phi(z)`, stable in the lower tail where both factors underflow.
pub fn inverse_mills(z: f64) -> f64 {
    if z > -30.0 {
        std_normal_pdf(z) / std_normal_cdf(z)
    } else {
        (std_normal_log_pdf(z) - std_normal_log_cdf(z)).exp()
    }
}

/// Standard normal quantile. Errors outside the open unit interval.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!(
            "normal quantile needs 0 < p < 1, got {p}"
        )));
    }
    Ok(quantile_unchecked(p))
}

/// Quantile for `p` already known to lie in (0, 1); values at the ends are
/// pushed just inside so the result stays finite.
#[inline]
pub(crate) fn quantile_unchecked(p: f64) -> f64 {
    let p = p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
    let (tail, sign) = if p < 0.5 { (p, -1.0) } else { (1.0 - p, 1.0) };
    let mut x = -SQRT_2 * erfc_inv(2.0 * tail);
    // One Halley step against the accurate CDF removes the inverse's error.
    if x.is_finite() {
        let e = std_normal_cdf(x) - tail;
        let u = e / std_normal_pdf(x);
        if u.is_finite() {
            x -= u / (1.0 + 0.5 * x * u);
        }
    }
    sign * -x
}

/// Inverse CDF without the refinement step, for integrand evaluation where
/// the inverse's own accuracy is plenty.
pub(crate) fn fast_quantile(p: f64) -> f64 {
    let p = p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Two-sided upper critical value `z_{1 - alpha/2}`.
pub fn two_sided_critical(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(quantile_unchecked(1.0 - alpha / 2.0))
}

/// Two-sided p-value `2 (1 - Phi(|t|))`.
pub fn two_sided_p_value(t: f64) -> f64 {
    (2.0 * std_normal_sf(t.abs())).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // Reference values computed with mpmath at 50 digits.
    const CDF_TABLE: &[(f64, f64)] = &[
        (-37.0, 5.7255712225245768e-300),
        (-20.0, 2.7536241186062337e-89),
        (-8.0, 6.2209605742717841e-16),
        (-1.0, 0.15865525393145705),
        (0.5, 0.6914624612740131),
        (3.0, 0.9986501019683699),
    ];

    #[test]
    fn cdf_reference_values() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        for &(z, want) in CDF_TABLE {
            assert_relative_eq!(std_normal_cdf(z), want, max_relative = 1e-12);
        }
        assert!(std_normal_cdf(-37.0) > 0.0);
    }

    #[test]
    fn quantile_975() {
        assert!((std_normal_quantile(0.975).unwrap() - 1.959964).abs() < 1e-6);
        assert_relative_eq!(
            std_normal_quantile(0.975).unwrap(),
            1.959963984540054,
            max_relative = 1e-14
        );
    }

    #[test]
    fn quantile_endpoints_error() {
        assert!(std_normal_quantile(0.0).is_err());
        assert!(std_normal_quantile(1.0).is_err());
        assert!(std_normal_quantile(f64::NAN).is_err());
    }

    #[test]
    fn log_cdf_tails() {
        // mpmath: log(ncdf(-40)), log(ncdf(-100))
        assert_relative_eq!(
            std_normal_log_cdf(-40.0),
            -804.6084420137538,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            std_normal_log_cdf(-100.0),
            -5005.524208694205,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            std_normal_log_cdf(-36.9),
            std_normal_cdf(-36.9).ln(),
            max_relative = 1e-13
        );
        assert_relative_eq!(
            std_normal_log_cdf(-37.1),
            std_normal_cdf(-37.1).ln(),
            max_relative = 1e-12
        );
        assert!(std_normal_log_cdf(10.0) < 0.0);
    }

    #[test]
    fn inverse_mills_continuity() {
        let below = inverse_mills(-30.0 - 1e-9);
        let above = inverse_mills(-30.0 + 1e-9);
        assert_relative_eq!(below, above, max_relative = 1e-8);
        // phi(z)/Phi(z) ~ -z for very negative z
        assert_relative_eq!(inverse_mills(-1e4), 1e4, max_relative = 1e-6);
    }

    proptest::proptest! {
        #[test]
        fn cdf_symmetry(z in -30.0f64..30.0) {
            let s = std_normal_cdf(z) + std_normal_cdf(-z);
            proptest::prop_assert!((s - 1.0).abs() < 1e-15);
        }

        #[test]
        fn quantile_roundtrip(p in 1e-300f64..1.0) {
            proptest::prop_assume!(p < 1.0 - 1e-12);
            let z = std_normal_quantile(p).unwrap();
            let back = std_normal_cdf(z);
            proptest::prop_assert!(((back - p) / p).abs() < 1e-12, "p={p} back={back}");
        }

        #[test]
        fn cdf_monotone(a in -38.0f64..38.0, d in 1e-6f64..1.0) {
            proptest::prop_assert!(std_normal_cdf(a) <= std_normal_cdf(a + d));
        }
    }
}
