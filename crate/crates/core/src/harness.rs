//! Replicated simulation experiments: familywise error, global and individual
//! power, and the composite-versus-full-likelihood efficiency ratio.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{build_contrasts, ContrastFamily, ContrastKind};
use crate::error::{Error, Result};
use crate::inference::{run_tests, Procedure, TestOptions};
use crate::models::{
    fit, mvn::efficiency_ratio, mvn_mle_fit, CovariateLevel, FitOptions, ModelKind,
};
use crate::mvn::qmc::QmcConfig;
use crate::simgen::{generate, ClusterSize, Correlation, GammaDependence, ScenarioSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthKind {
    Null,
    A1,
    A2,
}

impl TruthKind {
    pub fn name(self) -> &'static str {
        match self {
            TruthKind::Null => "null",
            TruthKind::A1 => "a1",
            TruthKind::A2 => "a2",
        }
    }
}

impl fmt::Display for TruthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TruthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "null" => Ok(TruthKind::Null),
            "a1" => Ok(TruthKind::A1),
            "a2" => Ok(TruthKind::A2),
            other => Err(Error::invalid(format!(
                "unknown truth '{other}' (null, a1, a2)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    /// Data-generating scenario; `scenario.beta` is the truth used.
    pub scenario: ScenarioSpec,
    pub contrasts: ContrastKind,
    pub truth: TruthKind,
    pub replicates: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_procedures")]
    pub procedures: Vec<Procedure>,
    #[serde(default)]
    pub qmc: QmcConfig,
    /// Worker threads; 0 uses the rayon default.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub fit: FitOptions,
    /// Also fit the full-likelihood estimator (multivariate normal only).
    #[serde(default)]
    pub efficiency: bool,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_procedures() -> Vec<Procedure> {
    Procedure::STANDARD.to_vec()
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.replicates == 0 {
            return Err(Error::invalid("replicates must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha must lie in (0, 1)"));
        }
        if self.procedures.is_empty() {
            return Err(Error::invalid("no procedures requested"));
        }
        if self.efficiency && self.scenario.model != ModelKind::Mvn {
            return Err(Error::Unsupported(
                "the efficiency ratio is defined for the multivariate normal model only".into(),
            ));
        }
        self.qmc.validate()?;
        self.fit.validate()?;
        self.contrast_family().map(|_| ())
    }

    pub fn contrast_family(&self) -> Result<ContrastFamily> {
        build_contrasts(self.contrasts, self.scenario.p)
    }
}

/// Proportion estimate with its binomial Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub count: u64,
    pub total: u64,
    pub estimate: f64,
    pub mc_se: f64,
}

impl Proportion {
    pub fn new(count: u64, total: u64) -> Self {
        let p = if total == 0 {
            0.0
        } else {
            count as f64 / total as f64
        };
        let se = if total == 0 {
            0.0
        } else {
            (p * (1.0 - p) / total as f64).sqrt()
        };
        Proportion {
            count,
            total,
            estimate: p,
            mc_se: se,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureSummary {
    pub procedure: Procedure,
    /// Replicates with at least one rejected true null.
    pub fwer: Proportion,
    /// Replicates with any rejection.
    pub global: Proportion,
    /// Sum over true-alternative hypotheses of their rejection rates.
    pub ind_power_sum: f64,
    pub ind_power_se: f64,
    /// Rejection count per hypothesis.
    pub rejections: Vec<u64>,
}

/// Per-replicate consistency checks between procedures, counted over
/// completed replicates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderingChecks {
    pub checked: u64,
    /// Replicates where some Bonferroni rejection was not a Holm rejection.
    pub holm_not_superset: u64,
    /// Replicates where Holm and Bonferroni disagreed on the global null.
    pub holm_global_mismatch: u64,
    /// Replicates where some Bonferroni rejection was not an MNQ rejection.
    pub mnq_not_superset: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub mc_se: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub name: String,
    pub model: ModelKind,
    pub truth: TruthKind,
    pub alpha: f64,
    pub replicates: usize,
    pub completed: usize,
    pub failures: usize,
    /// Indices of contrasts whose true value is non-zero.
    pub true_alternatives: Vec<usize>,
    pub procedures: Vec<ProcedureSummary>,
    pub efficiency: Option<MeanEstimate>,
    pub ordering: OrderingChecks,
}

impl SimSummary {
    pub fn procedure(&self, p: Procedure) -> Option<&ProcedureSummary> {
        self.procedures.iter().find(|s| s.procedure == p)
    }

    /// Long-format rows `(procedure, metric, estimate, mc_se)`.
    pub fn metric_rows(&self) -> Vec<(String, String, f64, f64)> {
        let mut rows = Vec::new();
        for s in &self.procedures {
            let name = s.procedure.name().to_string();
            rows.push((name.clone(), "fwer".into(), s.fwer.estimate, s.fwer.mc_se));
            if self.truth != TruthKind::Null {
                rows.push((
                    name.clone(),
                    "global_power".into(),
                    s.global.estimate,
                    s.global.mc_se,
                ));
            }
            if !self.true_alternatives.is_empty() {
                rows.push((
                    name,
                    "ind_power_sum".into(),
                    s.ind_power_sum,
                    s.ind_power_se,
                ));
            }
        }
        if let Some(e) = self.efficiency {
            rows.push(("mle_vs_cl".into(), "efficiency".into(), e.mean, e.mc_se));
        }
        rows
    }
}

struct ReplicateOutcome {
    rejects: Vec<Vec<bool>>,
    efficiency: Option<f64>,
}

/// Numerical failures that drop a replicate instead of aborting the run.
fn is_replicate_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::NonConvergence { .. }
            | Error::Separation { .. }
            | Error::IllConditioned { .. }
            | Error::DegenerateContrast { .. }
            | Error::InvalidDataset(_)
            | Error::NotCorrelation(_)
    )
}

fn run_replicate(
    cfg: &ExperimentConfig,
    cf: &ContrastFamily,
    tests: &TestOptions,
    fit_opts: &FitOptions,
    r: u64,
) -> Result<ReplicateOutcome> {
    let data = generate(&cfg.scenario, r)?;
    let f = fit(cfg.scenario.model, &data, fit_opts)?;
    let mut qmc = tests.qmc;
    qmc.seed = cfg.qmc.seed ^ r.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let opts = TestOptions {
        qmc,
        ..tests.clone()
    };
    let report = run_tests(&f, cf, &opts)?;
    let efficiency = if cfg.efficiency {
        let mle = mvn_mle_fit(&data, fit_opts)?;
        Some(efficiency_ratio(&mle, &f)?)
    } else {
        None
    };
    Ok(ReplicateOutcome {
        rejects: report.results.into_iter().map(|r| r.reject).collect(),
        efficiency,
    })
}

/// Runs every replicate and aggregates the decisions.
///
/// Replicate `r` draws its data from stream `r` of the scenario seed and its
/// QMC shifts from a seed mixed with `r`, and all counts are integers, so the
/// summary does not depend on the worker count or scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<SimSummary> {
    cfg.validate()?;
    let cf = cfg.contrast_family()?;
    let beta = DVector::from_column_slice(&cfg.scenario.beta);
    let effects = cf.matrix() * &beta;
    let true_alternatives: Vec<usize> = (0..cf.c()).filter(|&i| effects[i].abs() > 1e-12).collect();
    let tests = TestOptions {
        alpha: cfg.alpha,
        procedures: cfg.procedures.clone(),
        qmc: cfg.qmc,
        mnq_p_values: false,
    };
    let mut fit_opts = cfg.fit;
    fit_opts.covariate_level = cfg.scenario.covariate_level;

    let work = || -> Vec<Result<ReplicateOutcome>> {
        (0..cfg.replicates as u64)
            .into_par_iter()
            .map(|r| run_replicate(cfg, &cf, &tests, &fit_opts, r))
            .collect()
    };
    let outcomes = if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?
            .install(work)
    } else {
        work()
    };

    let k = cfg.procedures.len();
    let c = cf.c();
    let mut rejections = vec![vec![0u64; c]; k];
    let mut false_any = vec![0u64; k];
    let mut any = vec![0u64; k];
    let mut completed = 0u64;
    let mut failures = 0usize;
    let mut eff = Vec::new();
    let mut ordering = OrderingChecks::default();
    let pos = |p: Procedure| cfg.procedures.iter().position(|&q| q == p);
    let (holm, bonf, mnq) = (
        pos(Procedure::Holm),
        pos(Procedure::Bonferroni),
        pos(Procedure::Mnq),
    );
    for outcome in outcomes {
        let o = match outcome {
            Ok(o) => o,
            Err(e) if is_replicate_failure(&e) => {
                failures += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        completed += 1;
        for (j, rej) in o.rejects.iter().enumerate() {
            let mut false_hit = false;
            for (i, &r) in rej.iter().enumerate() {
                if r {
                    rejections[j][i] += 1;
                    if !true_alternatives.contains(&i) {
                        false_hit = true;
                    }
                }
            }
            false_any[j] += false_hit as u64;
            any[j] += rej.iter().any(|&r| r) as u64;
        }
        if let Some(b) = bonf {
            ordering.checked += 1;
            let br = &o.rejects[b];
            if let Some(h) = holm {
                let hr = &o.rejects[h];
                if br.iter().zip(hr).any(|(&bi, &hi)| bi && !hi) {
                    ordering.holm_not_superset += 1;
                }
                if br.iter().any(|&x| x) != hr.iter().any(|&x| x) {
                    ordering.holm_global_mismatch += 1;
                }
            }
            if let Some(m) = mnq {
                if br.iter().zip(&o.rejects[m]).any(|(&bi, &mi)| bi && !mi) {
                    ordering.mnq_not_superset += 1;
                }
            }
        }
        if let Some(e) = o.efficiency {
            eff.push(e);
        }
    }
    if completed == 0 {
        return Err(Error::NonConvergence {
            what: format!("experiment '{}': every replicate failed", cfg.name),
            iterations: cfg.replicates,
        });
    }
    let procedures = cfg
        .procedures
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            let rates: Vec<f64> = true_alternatives
                .iter()
                .map(|&i| rejections[j][i] as f64 / completed as f64)
                .collect();
            let ind = rates.iter().fold(0.0, |a, r| a + r);
            // Treats the per-hypothesis indicators as independent; a rough band.
            let ind_var: f64 = rates.iter().map(|r| r * (1.0 - r)).sum::<f64>() / completed as f64;
            ProcedureSummary {
                procedure: p,
                fwer: Proportion::new(false_any[j], completed),
                global: Proportion::new(any[j], completed),
                ind_power_sum: ind,
                ind_power_se: ind_var.sqrt(),
                rejections: rejections[j].clone(),
            }
        })
        .collect();
    let efficiency = (!eff.is_empty()).then(|| {
        let k = eff.len() as f64;
        let mean = eff.iter().sum::<f64>() / k;
        let var = eff.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
        MeanEstimate {
            mean,
            mc_se: (var / k).sqrt(),
            count: eff.len() as u64,
        }
    });
    Ok(SimSummary {
        name: cfg.name.clone(),
        model: cfg.scenario.model,
        truth: cfg.truth,
        alpha: cfg.alpha,
        replicates: cfg.replicates,
        completed: completed as usize,
        failures,
        true_alternatives,
        procedures,
        efficiency,
        ordering,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub n: usize,
    pub fwer: Proportion,
    /// `|fwer - alpha| <= 2 mc_se`.
    pub within_two_se: bool,
    pub failures: usize,
}

/// FWER of one procedure (MNQ by default) for each cluster count.
pub fn sample_size_scan(base: &ExperimentConfig, sizes: &[usize]) -> Result<Vec<ScanRow>> {
    if base.truth != TruthKind::Null {
        return Err(Error::invalid("a sample-size scan needs truth = null"));
    }
    let target = if base.procedures.contains(&Procedure::Mnq) {
        Procedure::Mnq
    } else {
        base.procedures[0]
    };
    sizes
        .iter()
        .map(|&n| {
            let mut cfg = base.clone();
            cfg.scenario.n = n;
            cfg.name = format!("{}-n{n}", base.name);
            let s = run_experiment(&cfg)?;
            let fwer = s.procedure(target).expect("requested procedure").fwer;
            Ok(ScanRow {
                n,
                within_two_se: (fwer.estimate - cfg.alpha).abs() <= 2.0 * fwer.mc_se,
                fwer,
                failures: s.failures,
            })
        })
        .collect()
}

/// Unstructured covariance for clusters of size four. Not symmetric as
/// given; the generator symmetrizes it.
pub fn unstructured_sigma() -> Vec<Vec<f64>> {
    vec![
        vec![1.3, 0.9, 0.5, 0.3],
        vec![0.9, 1.9, 1.3, 0.3],
        vec![0.5, 1.3, 1.3, 0.1],
        vec![0.3, 0.9, 0.1, 0.7],
    ]
}

/// Within-cluster covariate correlation and covariate SD for the normal and
/// probit presets. With iid mean-zero covariates `J = H` for every
/// univariate-margin fit and the naive procedure would match MNQ. The shared
/// covariate component makes `J` differ from `H`; the SD sets the scale of the
/// alternative-one contrasts.
pub const COVARIATE_CORR: f64 = 0.14;
pub const COVARIATE_SD: f64 = 5.0;

/// Gamma design: covariate SD sized for the alternative-one power, and a
/// strongly dependent correlated case.
pub const GAMMA_COVARIATE_SD: f64 = 0.8;
pub const GAMMA_COVARIATE_CORR: f64 = 0.7;
pub const GAMMA_SHARE: f64 = 0.8;

fn calibrated_design(spec: &mut ScenarioSpec) {
    spec.covariate_corr = COVARIATE_CORR;
    spec.covariate_sd = COVARIATE_SD;
}

fn pad(head: &[f64], p: usize, fill: f64) -> Vec<f64> {
    let mut v = vec![fill; p];
    v[..head.len()].copy_from_slice(head);
    v
}

/// Truth vector for a model, alternative and covariate count.
pub fn truth_vector(model: ModelKind, truth: TruthKind, p: usize) -> Result<Vec<f64>> {
    let head: &[f64] = match (model, truth) {
        (ModelKind::Gamma, TruthKind::Null) => &[],
        (ModelKind::Gamma, TruthKind::A1) => &[0.75, 0.75, 0.68],
        (ModelKind::Gamma, TruthKind::A2) => &[0.75, 0.80, 0.68, 0.70, 0.79, 0.69],
        (_, TruthKind::Null) => &[],
        (ModelKind::Mvn, TruthKind::A1) => &[0.0, 0.0, 0.0, 0.032],
        (ModelKind::Probit, TruthKind::A1) => &[0.0, 0.0, 0.0, 0.03],
        (ModelKind::Quadexp, TruthKind::A1) => &[0.0, 0.0, 0.0, 0.12],
        (ModelKind::Mvn | ModelKind::Probit, TruthKind::A2) => {
            &[0.0, 0.008, 0.01, -0.03, 0.005, -0.01]
        }
        (ModelKind::Quadexp, TruthKind::A2) => &[0.0, 0.08, 0.12, -0.03, 0.05, -0.08],
    };
    if p < head.len().max(2) {
        return Err(Error::invalid(format!(
            "the {truth} truth for {model} needs at least {} covariates",
            head.len().max(2)
        )));
    }
    let fill = if model == ModelKind::Gamma { 0.75 } else { 0.0 };
    Ok(pad(head, p, fill))
}

/// Named presets, e.g. `mvn-rho0.5-m4-p10-null`, `probit-rho0-m10-p20-a2`,
/// `quadexp-w0.5-p10-null`, `gamma-correlated-a1`,
/// `mvn-unstructured-p10-null`, optionally suffixed `-pairwise`.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let unknown = || Error::invalid(format!("unknown preset '{name}'; see `preset_names()`"));
    let (body, pairwise) = match name.strip_suffix("-pairwise") {
        Some(b) => (b, true),
        None => (name, false),
    };
    let parts: Vec<&str> = body.split('-').collect();
    let (model, rest) = parts.split_first().ok_or_else(unknown)?;
    let model: ModelKind = model.parse().map_err(|_| unknown())?;
    let (truth, rest) = rest.split_last().ok_or_else(unknown)?;
    let truth: TruthKind = truth.parse().map_err(|_| unknown())?;
    let num = |s: &str, prefix: &str| -> Result<f64> {
        s.strip_prefix(prefix)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(unknown)
    };
    let int = |s: &str, prefix: &str| -> Result<usize> {
        s.strip_prefix(prefix)
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(unknown)
    };
    let mut spec;
    match (model, rest) {
        (ModelKind::Mvn, [rho, m, p]) => {
            let (rho, m, p) = (num(rho, "rho")?, int(m, "m")?, int(p, "p")?);
            spec = ScenarioSpec::new(
                model,
                200,
                ClusterSize::Fixed(m),
                truth_vector(model, truth, p)?,
            );
            spec.correlation = Correlation::Exchangeable { sigma2: 0.8, rho };
            calibrated_design(&mut spec);
        }
        (ModelKind::Mvn, ["unstructured", p]) => {
            let p = int(p, "p")?;
            spec = ScenarioSpec::new(
                model,
                200,
                ClusterSize::Fixed(4),
                truth_vector(model, truth, p)?,
            );
            spec.correlation = Correlation::Unstructured(unstructured_sigma());
            calibrated_design(&mut spec);
        }
        (ModelKind::Probit, [rho, m, p]) => {
            let (rho, m, p) = (num(rho, "rho")?, int(m, "m")?, int(p, "p")?);
            spec = ScenarioSpec::new(
                model,
                500,
                ClusterSize::Fixed(m),
                truth_vector(model, truth, p)?,
            );
            spec.correlation = Correlation::Exchangeable { sigma2: 1.0, rho };
            calibrated_design(&mut spec);
        }
        (ModelKind::Quadexp, [w, p]) => {
            let (w, p) = (num(w, "w")?, int(p, "p")?);
            spec = ScenarioSpec::new(
                model,
                700,
                ClusterSize::Uniform { min: 4, max: 8 },
                truth_vector(model, truth, p)?,
            );
            spec.w = w;
            spec.covariate_level = CovariateLevel::ClusterMean;
        }
        (ModelKind::Gamma, [dep]) => {
            spec = ScenarioSpec::new(
                model,
                3000,
                ClusterSize::Fixed(3),
                truth_vector(model, truth, 10)?,
            );
            spec.gamma_dependence = match *dep {
                "independent" => GammaDependence::Independent,
                "correlated" => GammaDependence::SharedComponent { share: GAMMA_SHARE },
                _ => return Err(unknown()),
            };
            spec.covariate_sd = GAMMA_COVARIATE_SD;
            spec.covariate_corr = GAMMA_COVARIATE_CORR;
        }
        _ => return Err(unknown()),
    }
    spec.seed = 20_240_501;
    let mut procedures = Procedure::STANDARD.to_vec();
    let contrasts = if pairwise {
        procedures.push(Procedure::Tukey);
        ContrastKind::AllPairwise
    } else {
        ContrastKind::ManyToOne { baseline: 0 }
    };
    let cfg = ExperimentConfig {
        name: name.to_string(),
        efficiency: model == ModelKind::Mvn && !pairwise,
        scenario: spec,
        contrasts,
        truth,
        replicates: 2000,
        alpha: 0.05,
        procedures,
        qmc: QmcConfig::simulation(),
        workers: 0,
        fit: FitOptions::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Every preset name [`preset`] accepts, without the `-pairwise` variants.
pub fn preset_names() -> Vec<String> {
    let mut out = Vec::new();
    let truths = ["null", "a1", "a2"];
    for t in truths {
        for rho in ["0", "0.2", "0.5"] {
            for m in [4, 10] {
                for p in [10, 20] {
                    out.push(format!("mvn-rho{rho}-m{m}-p{p}-{t}"));
                }
            }
        }
        for p in [10, 20] {
            out.push(format!("mvn-unstructured-p{p}-{t}"));
        }
        for rho in ["0", "0.5"] {
            for m in [4, 10] {
                for p in [10, 20] {
                    out.push(format!("probit-rho{rho}-m{m}-p{p}-{t}"));
                }
            }
        }
        for w in ["0", "0.5"] {
            for p in [10, 20] {
                out.push(format!("quadexp-w{w}-p{p}-{t}"));
            }
        }
        for dep in ["independent", "correlated"] {
            out.push(format!("gamma-{dep}-{t}"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_listed_preset_parses() {
        for name in preset_names() {
            let cfg = preset(&name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(cfg.name, name);
        }
        assert!(preset("mvn-rho0.5-m4-p10-null-pairwise").is_ok());
        assert!(preset("mvn-rho0.5-m4").is_err());
        assert!(preset("logit-null").is_err());
    }

    #[test]
    fn truth_vectors() {
        let a2 = truth_vector(ModelKind::Mvn, TruthKind::A2, 10).unwrap();
        assert_eq!(a2.len(), 10);
        assert_eq!(a2[3], -0.03);
        let g = truth_vector(ModelKind::Gamma, TruthKind::A1, 10).unwrap();
        assert_eq!(g[2], 0.68);
        assert_eq!(g[9], 0.75);
    }

    #[test]
    fn proportion_se() {
        let p = Proportion::new(100, 2000);
        assert!((p.estimate - 0.05).abs() < 1e-15);
        assert!((p.mc_se - (0.05f64 * 0.95 / 2000.0).sqrt()).abs() < 1e-15);
    }
}
