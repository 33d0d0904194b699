//! Scalar root finding, 1-D quadrature and small dense linear-algebra helpers.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct RootResult {
    pub root: f64,
    pub f_root: f64,
    pub evaluations: usize,
}

/// Brent's method on a bracket `[a, b]` with `f(a)` and `f(b)` of opposite sign.
///
/// Accepts already-evaluated endpoint values so callers that probed the
/// bracket do not pay for those evaluations twice.
pub fn brent<F>(
    mut f: F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    xtol: f64,
    max_iter: usize,
) -> Result<RootResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    if fa == 0.0 {
        return Ok(RootResult {
            root: a,
            f_root: fa,
            evaluations: 0,
        });
    }
    if fb == 0.0 {
        return Ok(RootResult {
            root: b,
            f_root: fb,
            evaluations: 0,
        });
    }
    if fa.signum() == fb.signum() {
        return Err(Error::invalid(format!(
            "root not bracketed: f({a}) = {fa}, f({b}) = {fb}"
        )));
    }
    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for it in 1..=max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(RootResult {
                root: b,
                f_root: fb,
                evaluations: it - 1,
            });
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b)?;
    }
    Err(Error::NonConvergence {
        what: "Brent root search".into(),
        iterations: max_iter,
    })
}

// Gauss-Kronrod 7/15 nodes and weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let sum = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * sum;
        if j % 2 == 1 {
            gauss += WG[j / 2] * sum;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive Gauss-Kronrod quadrature on a finite interval.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        whole: f64,
        err: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        if err <= tol || depth == 0 {
            return whole;
        }
        let mid = 0.5 * (a + b);
        let (l, le) = gk15(f, a, mid);
        let (r, re) = gk15(f, mid, b);
        recurse(f, a, mid, l, le, 0.5 * tol, depth - 1)
            + recurse(f, mid, b, r, re, 0.5 * tol, depth - 1)
    }
    let (whole, err) = gk15(&f, a, b);
    recurse(&f, a, b, whole, err, abs_tol, 40)
}

/// `(A + A^T) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// 2-norm condition number from the singular values; infinite when singular.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a symmetric positive definite matrix, refusing when the
/// condition estimate exceeds `max_condition`.
pub fn spd_inverse(a: &DMatrix<f64>, max_condition: f64) -> Result<DMatrix<f64>> {
    let condition = condition_number(a);
    if !(condition <= max_condition) {
        return Err(Error::IllConditioned { condition });
    }
    let inv = match a.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => a
            .clone()
            .try_inverse()
            .ok_or(Error::IllConditioned { condition })?,
    };
    Ok(symmetrize(&inv))
}

/// Solves `a x = b` for symmetric positive definite `a`, falling back to LU.
pub fn spd_solve(a: &DMatrix<f64>, b: &nalgebra::DVector<f64>) -> Option<nalgebra::DVector<f64>> {
    match a.clone().cholesky() {
        Some(ch) => Some(ch.solve(b)),
        None => a.clone().lu().solve(b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_cubic_root() {
        let f = |x: f64| Ok(x * x * x - 2.0 * x - 5.0);
        let r = brent(f, 2.0, 3.0, f(2.0).unwrap(), f(3.0).unwrap(), 1e-14, 100).unwrap();
        assert!((r.root - 2.094_551_481_542_326_5).abs() < 1e-12);
    }

    #[test]
    fn brent_requires_bracket() {
        let f = |x: f64| Ok(x * x + 1.0);
        assert!(brent(f, -1.0, 1.0, 2.0, 2.0, 1e-10, 50).is_err());
    }

    #[test]
    fn quadrature_gaussian_mass() {
        let v = integrate(|x| (-0.5 * x * x).exp(), -12.0, 12.0, 1e-13);
        assert!((v - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn spd_inverse_rejects_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            spd_inverse(&a, 1e12),
            Err(Error::IllConditioned { .. })
        ));
    }
}
