//! Wald-type statistics for a contrast family, their estimated correlation
//! matrix, and the simultaneous testing procedures.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ContrastFamily, ContrastKind};
use crate::error::{Error, Result};
use crate::models::FitResult;
use crate::mvn::normal::{quantile_unchecked, two_sided_p_value};
use crate::mvn::qmc::{mvn_rectangle_prob, ProbEstimate, QmcConfig};
use crate::mvn::quantile::{
    chi_square_quantile, equicoordinate_quantile_detailed, studentized_range_quantile,
};

/// A simultaneous testing procedure. `NaiveMnq` is MNQ applied to statistics
/// and correlations computed from `H^-1` instead of the sandwich.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    Mnq,
    NaiveMnq,
    Bonferroni,
    Sidak,
    Holm,
    Scheffe,
    Tukey,
}

impl Procedure {
    /// The procedures of the many-to-one simulation tables, in table order.
    pub const STANDARD: [Procedure; 6] = [
        Procedure::Mnq,
        Procedure::NaiveMnq,
        Procedure::Bonferroni,
        Procedure::Sidak,
        Procedure::Holm,
        Procedure::Scheffe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Procedure::Mnq => "mnq",
            Procedure::NaiveMnq => "naive",
            Procedure::Bonferroni => "bonferroni",
            Procedure::Sidak => "sidak",
            Procedure::Holm => "holm",
            Procedure::Scheffe => "scheffe",
            Procedure::Tukey => "tukey",
        }
    }

    pub fn is_naive(self) -> bool {
        self == Procedure::NaiveMnq
    }
}

impl fmt::Display for Procedure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Procedure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mnq" => Ok(Procedure::Mnq),
            "naive" | "naive-mnq" | "naive_mnq" => Ok(Procedure::NaiveMnq),
            "bonferroni" | "bonf" => Ok(Procedure::Bonferroni),
            "sidak" | "dunn-sidak" | "s-d" => Ok(Procedure::Sidak),
            "holm" => Ok(Procedure::Holm),
            "scheffe" => Ok(Procedure::Scheffe),
            "tukey" => Ok(Procedure::Tukey),
            other => Err(Error::invalid(format!("unknown procedure '{other}'"))),
        }
    }
}

/// Parses a comma-separated procedure list.
pub fn parse_procedures(list: &str) -> Result<Vec<Procedure>> {
    let mut out: Vec<Procedure> = Vec::new();
    for item in list.split(',').filter(|s| !s.trim().is_empty()) {
        let p: Procedure = item.parse()?;
        if !out.contains(&p) {
            out.push(p);
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("no procedures given"));
    }
    Ok(out)
}

/// The contrast matrix sized to the fitted parameter vector.
fn contrast_matrix(cf: &ContrastFamily, dim: usize) -> Result<DMatrix<f64>> {
    cf.padded_matrix(dim)
}

/// `D = C Gamma C^T`.
pub fn contrast_covariance(gamma_hat: &DMatrix<f64>, cf: &ContrastFamily) -> Result<DMatrix<f64>> {
    if !gamma_hat.is_square() {
        return Err(Error::dims("covariance matrix must be square"));
    }
    let c = contrast_matrix(cf, gamma_hat.nrows())?;
    Ok(&c * gamma_hat * c.transpose())
}

/// `T_i = C_i theta / sqrt(C_i Gamma C_i^T / n)`.
pub fn test_statistics(
    theta_hat: &DVector<f64>,
    gamma_hat: &DMatrix<f64>,
    cf: &ContrastFamily,
    n: usize,
) -> Result<DVector<f64>> {
    if gamma_hat.nrows() != theta_hat.len() {
        return Err(Error::dims(format!(
            "theta has {} entries but the covariance is {}x{}",
            theta_hat.len(),
            gamma_hat.nrows(),
            gamma_hat.ncols()
        )));
    }
    if n == 0 {
        return Err(Error::invalid("cluster count must be positive"));
    }
    let c = contrast_matrix(cf, theta_hat.len())?;
    let est = &c * theta_hat;
    let d = &c * gamma_hat * c.transpose();
    let mut t = DVector::zeros(cf.c());
    for i in 0..cf.c() {
        let var = d[(i, i)];
        if !(var > 0.0) || !var.is_finite() {
            return Err(Error::DegenerateContrast {
                index: i,
                variance: var,
            });
        }
        t[i] = est[i] / (var / n as f64).sqrt();
    }
    Ok(t)
}

/// `V = diag(D)^-1/2 D diag(D)^-1/2` with the unit diagonal set exactly.
pub fn correlation_matrix_v(gamma_hat: &DMatrix<f64>, cf: &ContrastFamily) -> Result<DMatrix<f64>> {
    let d = contrast_covariance(gamma_hat, cf)?;
    let c = d.nrows();
    for i in 0..c {
        if !(d[(i, i)] > 0.0) {
            return Err(Error::DegenerateContrast {
                index: i,
                variance: d[(i, i)],
            });
        }
    }
    Ok(DMatrix::from_fn(c, c, |i, j| {
        if i == j {
            1.0
        } else {
            let r = 0.5 * (d[(i, j)] + d[(j, i)]) / (d[(i, i)] * d[(j, j)]).sqrt();
            r.clamp(-1.0, 1.0)
        }
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureResult {
    pub procedure: Procedure,
    /// Single cutoff on `|T|`; absent for Holm, whose thresholds vary.
    pub cutoff: Option<f64>,
    /// Threshold applied to each hypothesis; `reject[i]` iff `|T_i| > thresholds[i]`.
    pub thresholds: Vec<f64>,
    pub reject: Vec<bool>,
    pub adjusted_p: Option<Vec<f64>>,
    pub global_reject: bool,
    /// Estimated coverage of the MNQ cutoff.
    pub coverage: Option<ProbEstimate>,
}

impl ProcedureResult {
    fn from_thresholds(
        procedure: Procedure,
        cutoff: Option<f64>,
        t: &DVector<f64>,
        thresholds: Vec<f64>,
    ) -> Self {
        let reject: Vec<bool> = t
            .iter()
            .zip(&thresholds)
            .map(|(ti, h)| ti.abs() > *h)
            .collect();
        ProcedureResult {
            procedure,
            cutoff,
            global_reject: reject.iter().any(|&r| r),
            thresholds,
            reject,
            adjusted_p: None,
            coverage: None,
        }
    }

    pub fn rejections(&self) -> usize {
        self.reject.iter().filter(|&&r| r).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOptions {
    pub alpha: f64,
    pub procedures: Vec<Procedure>,
    pub qmc: QmcConfig,
    /// Also compute `P(max |Z| >= |T_i|)` for MNQ (one rectangle probability
    /// per hypothesis).
    pub mnq_p_values: bool,
}

impl Default for TestOptions {
    fn default() -> Self {
        TestOptions {
            alpha: 0.05,
            procedures: Procedure::STANDARD.to_vec(),
            qmc: QmcConfig::default(),
            mnq_p_values: false,
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// Applies one procedure to statistics `t` with estimated correlation `v_hat`.
pub fn adjust(
    procedure: Procedure,
    t: &DVector<f64>,
    v_hat: &DMatrix<f64>,
    alpha: f64,
    cf: &ContrastFamily,
    cfg: &QmcConfig,
) -> Result<ProcedureResult> {
    check_alpha(alpha)?;
    let c = t.len();
    if c == 0 || c != cf.c() || v_hat.shape() != (c, c) {
        return Err(Error::dims(format!(
            "{} statistics, {} contrasts, V is {}x{}",
            c,
            cf.c(),
            v_hat.nrows(),
            v_hat.ncols()
        )));
    }
    let cf64 = c as f64;
    let p_values: Vec<f64> = t.iter().map(|&ti| two_sided_p_value(ti)).collect();
    let uniform = |procedure, cutoff: f64| {
        ProcedureResult::from_thresholds(procedure, Some(cutoff), t, vec![cutoff; c])
    };
    let result = match procedure {
        Procedure::Bonferroni => {
            let mut r = uniform(procedure, quantile_unchecked(1.0 - alpha / (2.0 * cf64)));
            r.adjusted_p = Some(p_values.iter().map(|p| (cf64 * p).min(1.0)).collect());
            r
        }
        Procedure::Sidak => {
            let per_test = -((-alpha).ln_1p() / cf64).exp_m1();
            let mut r = uniform(procedure, quantile_unchecked(1.0 - per_test / 2.0));
            r.adjusted_p = Some(
                p_values
                    .iter()
                    .map(|&p| (-(cf64 * (-p).ln_1p()).exp_m1()).min(1.0))
                    .collect(),
            );
            r
        }
        Procedure::Holm => holm(t, &p_values, alpha),
        Procedure::Scheffe => {
            let nu = cf.rank();
            uniform(procedure, chi_square_quantile(nu, 1.0 - alpha)?.sqrt())
        }
        Procedure::Tukey => {
            if !matches!(cf.kind(), ContrastKind::AllPairwise) {
                return Err(Error::invalid(
                    "Tukey's procedure needs an all-pairwise contrast family",
                ));
            }
            let q = studentized_range_quantile(cf.p(), alpha)?;
            uniform(procedure, q / std::f64::consts::SQRT_2)
        }
        Procedure::Mnq | Procedure::NaiveMnq => {
            let q = equicoordinate_quantile_detailed(v_hat, alpha, cfg)?;
            let mut r = uniform(procedure, q.cutoff);
            r.coverage = Some(q.coverage);
            r
        }
    };
    Ok(result)
}

/// Step-down Holm: the k-th smallest p-value (0-based) is compared with
/// `alpha / (c - k)` until the first acceptance.
fn holm(t: &DVector<f64>, p_values: &[f64], alpha: f64) -> ProcedureResult {
    let c = t.len();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        t[b].abs()
            .partial_cmp(&t[a].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut thresholds = vec![0.0; c];
    let mut stopped: Option<f64> = None;
    for (k, &i) in order.iter().enumerate() {
        let stage = quantile_unchecked(1.0 - alpha / (2.0 * (c - k) as f64));
        match stopped {
            Some(h) => thresholds[i] = h,
            None => {
                thresholds[i] = stage;
                if t[i].abs() <= stage {
                    stopped = Some(stage);
                }
            }
        }
    }
    let mut adjusted = vec![0.0; c];
    let mut running: f64 = 0.0;
    for (k, &i) in order.iter().enumerate() {
        running = running.max(((c - k) as f64 * p_values[i]).min(1.0));
        adjusted[i] = running;
    }
    let mut r = ProcedureResult::from_thresholds(Procedure::Holm, None, t, thresholds);
    r.adjusted_p = Some(adjusted);
    r
}

/// Statistics and correlations under one covariance estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticSet {
    pub t_stats: Vec<f64>,
    pub v_hat: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub labels: Vec<String>,
    /// `C theta_hat`.
    pub estimates: Vec<f64>,
    pub alpha: f64,
    pub n: usize,
    pub sandwich: StatisticSet,
    /// Present when any requested procedure is naive.
    pub naive: Option<StatisticSet>,
    pub results: Vec<ProcedureResult>,
}

impl TestReport {
    pub fn result(&self, procedure: Procedure) -> Option<&ProcedureResult> {
        self.results.iter().find(|r| r.procedure == procedure)
    }

    /// Statistics a procedure was applied to.
    pub fn statistics_for(&self, procedure: Procedure) -> &StatisticSet {
        if procedure.is_naive() {
            self.naive.as_ref().unwrap_or(&self.sandwich)
        } else {
            &self.sandwich
        }
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Builds statistics from a fit and applies every requested procedure.
///
/// Non-naive procedures use the sandwich `H^-1 J H^-1` regardless of the
/// fit's own `naive` flag; `NaiveMnq` uses `H^-1`.
pub fn run_tests(fit: &FitResult, cf: &ContrastFamily, opts: &TestOptions) -> Result<TestReport> {
    check_alpha(opts.alpha)?;
    opts.qmc.validate()?;
    if cf.p() != fit.n_beta && cf.p() != fit.theta_hat.len() {
        return Err(Error::dims(format!(
            "contrasts address {} parameters but the fit has {} coefficients",
            cf.p(),
            fit.n_beta
        )));
    }
    let full = fit.covariance(false)?;
    let t = test_statistics(&fit.theta_hat, &full, cf, fit.n)?;
    let v = correlation_matrix_v(&full, cf)?;
    let naive = if opts.procedures.iter().any(|p| p.is_naive()) {
        let g = fit.covariance(true)?;
        Some((
            test_statistics(&fit.theta_hat, &g, cf, fit.n)?,
            correlation_matrix_v(&g, cf)?,
        ))
    } else {
        None
    };
    let mut results = Vec::with_capacity(opts.procedures.len());
    for &proc_ in &opts.procedures {
        let (tt, vv) = match (&naive, proc_.is_naive()) {
            (Some((tn, vn)), true) => (tn, vn),
            _ => (&t, &v),
        };
        let mut r = adjust(proc_, tt, vv, opts.alpha, cf, &opts.qmc)?;
        if opts.mnq_p_values && matches!(proc_, Procedure::Mnq | Procedure::NaiveMnq) {
            r.adjusted_p = Some(mnq_p_values(tt, vv, &opts.qmc)?);
        }
        results.push(r);
    }
    let c = contrast_matrix(cf, fit.theta_hat.len())?;
    Ok(TestReport {
        labels: cf.labels().to_vec(),
        estimates: (&c * &fit.theta_hat).iter().copied().collect(),
        alpha: opts.alpha,
        n: fit.n,
        sandwich: StatisticSet {
            t_stats: t.iter().copied().collect(),
            v_hat: matrix_rows(&v),
        },
        naive: naive.map(|(tn, vn)| StatisticSet {
            t_stats: tn.iter().copied().collect(),
            v_hat: matrix_rows(&vn),
        }),
        results,
    })
}

/// `P(max_k |Z_k| >= |T_i|)` for each hypothesis.
pub fn mnq_p_values(t: &DVector<f64>, v_hat: &DMatrix<f64>, cfg: &QmcConfig) -> Result<Vec<f64>> {
    let c = t.len();
    t.iter()
        .map(|ti| {
            let a = ti.abs();
            let inside = mvn_rectangle_prob(&vec![-a; c], &vec![a; c], v_hat, cfg)?;
            Ok((1.0 - inside.value).clamp(0.0, 1.0))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_contrasts;

    #[test]
    fn direct_arithmetic_statistic() {
        let cf = ContrastFamily::custom(
            DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
            vec!["b1".into()],
        )
        .unwrap();
        let theta = DVector::from_row_slice(&[0.2, 0.5, -0.1]);
        let t = test_statistics(&theta, &DMatrix::identity(3, 3), &cf, 100).unwrap();
        assert!((t[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn many_to_one_v_has_half_correlation() {
        let cf = build_contrasts(ContrastKind::ManyToOne { baseline: 0 }, 3).unwrap();
        let v = correlation_matrix_v(&DMatrix::identity(3, 3), &cf).unwrap();
        assert_eq!(v[(0, 0)], 1.0);
        assert!((v[(0, 1)] - 0.5).abs() < 1e-15);
        let v2 = correlation_matrix_v(&(DMatrix::identity(3, 3) * 7.5), &cf).unwrap();
        assert!((v - v2).amax() < 1e-15);
    }

    #[test]
    fn degenerate_contrast_is_an_error() {
        let cf = build_contrasts(ContrastKind::AllPairwise, 2).unwrap();
        let g = DMatrix::from_element(2, 2, 1.0);
        let err = test_statistics(&DVector::zeros(2), &g, &cf, 10).unwrap_err();
        assert!(matches!(err, Error::DegenerateContrast { index: 0, .. }));
    }

    #[test]
    fn bonferroni_cutoff_for_ten() {
        let cf = build_contrasts(ContrastKind::ManyToOne { baseline: 0 }, 11).unwrap();
        let t = DVector::zeros(10);
        let r = adjust(
            Procedure::Bonferroni,
            &t,
            &DMatrix::identity(10, 10),
            0.05,
            &cf,
            &QmcConfig::default(),
        )
        .unwrap();
        assert!((r.cutoff.unwrap() - 2.807034).abs() < 1e-6);
        assert!(!r.global_reject);
    }

    #[test]
    fn holm_step_down() {
        let cf = build_contrasts(ContrastKind::ManyToOne { baseline: 0 }, 4).unwrap();
        let t = DVector::from_row_slice(&[3.0, 2.3, 0.5]);
        let v = DMatrix::identity(3, 3);
        let cfg = QmcConfig::default();
        let holm = adjust(Procedure::Holm, &t, &v, 0.05, &cf, &cfg).unwrap();
        let bonf = adjust(Procedure::Bonferroni, &t, &v, 0.05, &cf, &cfg).unwrap();
        // Stage cutoffs 2.394, 2.241, 1.960: 3.0 and 2.3 go, 0.5 stops.
        assert_eq!(holm.reject, vec![true, true, false]);
        assert_eq!(bonf.reject, vec![true, false, false]);
        let adj = holm.adjusted_p.unwrap();
        assert!(adj[0] <= adj[1] && adj[1] <= adj[2]);
    }

    #[test]
    fn tukey_needs_pairwise() {
        let cf = build_contrasts(ContrastKind::ManyToOne { baseline: 0 }, 3).unwrap();
        let t = DVector::zeros(2);
        let r = adjust(
            Procedure::Tukey,
            &t,
            &DMatrix::identity(2, 2),
            0.05,
            &cf,
            &QmcConfig::default(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn procedure_list_parsing() {
        let l = parse_procedures("mnq, holm,MNQ,naive").unwrap();
        assert_eq!(
            l,
            vec![Procedure::Mnq, Procedure::Holm, Procedure::NaiveMnq]
        );
        assert!(parse_procedures("fdr").is_err());
    }
}
