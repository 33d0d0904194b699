//! Text, CSV and JSON renderings of fits, test reports and simulation summaries.

use std::io::Write;

use clap::ValueEnum;
use clmult_core::harness::{ExperimentConfig, ScanRow};
use clmult_core::models::Nuisance;
use clmult_core::mvn::two_sided_p_value;
use clmult_core::{ClusteredDataset, FitResult, Procedure, SimSummary, TestReport};
use serde_json::{json, Value};

type Res = Result<(), Box<dyn std::error::Error>>;

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Json,
}

struct CoefRow {
    name: String,
    estimate: f64,
    se: f64,
    z: f64,
    p: f64,
}

fn coef_rows(f: &FitResult) -> Vec<CoefRow> {
    let se = f.std_errors();
    (0..f.theta_hat.len())
        .map(|j| {
            let z = f.theta_hat[j] / se[j];
            CoefRow {
                name: f.param_names[j].clone(),
                estimate: f.theta_hat[j],
                se: se[j],
                z,
                p: two_sided_p_value(z),
            }
        })
        .collect()
}

fn nuisance_json(n: &Nuisance) -> Value {
    match n {
        Nuisance::None => Value::Null,
        Nuisance::Covariance(s) => json!({
            "covariance": s.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>()
        }),
        Nuisance::Dispersion { nu, mean_deviance } => {
            json!({ "nu": nu, "mean_deviance": mean_deviance })
        }
    }
}

fn write_json(w: &mut dyn Write, v: &Value) -> Res {
    serde_json::to_writer_pretty(&mut *w, v)?;
    writeln!(w)?;
    Ok(())
}

pub fn write_fit(w: &mut dyn Write, f: &FitResult, d: &ClusteredDataset, format: Format) -> Res {
    let rows = coef_rows(f);
    let se_kind = if f.naive { "naive" } else { "sandwich" };
    match format {
        Format::Text => {
            writeln!(w, "model      {}", f.model)?;
            writeln!(
                w,
                "clusters   {}  observations {}",
                f.n,
                d.total_observations()
            )?;
            writeln!(w, "log CL     {:.6}", f.loglik)?;
            writeln!(
                w,
                "converged  {}  iterations {}  |score| {:.3e}",
                f.converged, f.iterations, f.score_norm
            )?;
            writeln!(w, "std errors {se_kind}")?;
            writeln!(w)?;
            writeln!(
                w,
                "{:<12} {:>12} {:>12} {:>9} {:>10}",
                "parameter", "estimate", "se", "z", "p"
            )?;
            for r in &rows {
                writeln!(
                    w,
                    "{:<12} {:>12.6} {:>12.6} {:>9.3} {:>10.4}",
                    r.name, r.estimate, r.se, r.z, r.p
                )?;
            }
            match &f.nuisance {
                Nuisance::None => {}
                Nuisance::Covariance(s) => {
                    writeln!(w)?;
                    writeln!(w, "residual covariance")?;
                    for row in s.row_iter() {
                        let cells: Vec<String> = row.iter().map(|v| format!("{v:>10.5}")).collect();
                        writeln!(w, "{}", cells.join(" "))?;
                    }
                }
                Nuisance::Dispersion { nu, mean_deviance } => {
                    writeln!(w)?;
                    writeln!(w, "shape nu {nu:.6}  mean deviance {mean_deviance:.6}")?;
                }
            }
        }
        Format::Csv => {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["parameter", "estimate", "se", "z", "p"])?;
            for r in &rows {
                c.write_record([
                    r.name.clone(),
                    r.estimate.to_string(),
                    r.se.to_string(),
                    r.z.to_string(),
                    r.p.to_string(),
                ])?;
            }
            c.flush()?;
        }
        Format::Json => {
            let coefs: Vec<Value> = rows
                .iter()
                .map(|r| json!({"parameter": r.name, "estimate": r.estimate, "se": r.se, "z": r.z, "p": r.p}))
                .collect();
            write_json(
                w,
                &json!({
                    "model": f.model.name(),
                    "clusters": f.n,
                    "observations": d.total_observations(),
                    "log_cl": f.loglik,
                    "converged": f.converged,
                    "iterations": f.iterations,
                    "score_norm": f.score_norm,
                    "std_errors": se_kind,
                    "coefficients": coefs,
                    "nuisance": nuisance_json(&f.nuisance),
                }),
            )?;
        }
    }
    Ok(())
}

fn decision(r: bool) -> &'static str {
    if r {
        "R"
    } else {
        "A"
    }
}

pub fn write_test(w: &mut dyn Write, rep: &TestReport, f: &FitResult, format: Format) -> Res {
    match format {
        Format::Text => {
            writeln!(
                w,
                "model {}  clusters {}  alpha {}",
                f.model, rep.n, rep.alpha
            )?;
            for res in &rep.results {
                let label = match res.cutoff {
                    Some(q) => format!("{}  cutoff {q:.4}", res.procedure.name()),
                    None => format!("{}  stepwise", res.procedure.name()),
                };
                let global = if res.global_reject {
                    "rejected"
                } else {
                    "not rejected"
                };
                writeln!(w)?;
                writeln!(w, "{label}  global null {global}")?;
                let t = &rep.statistics_for(res.procedure).t_stats;
                let with_p = res.adjusted_p.is_some();
                write!(
                    w,
                    "{:<16} {:>12} {:>9} {:>9} {:>3}",
                    "hypothesis", "estimate", "T", "threshold", ""
                )?;
                if with_p {
                    write!(w, " {:>10}", "adj p")?;
                }
                writeln!(w)?;
                for i in 0..rep.labels.len() {
                    write!(
                        w,
                        "{:<16} {:>12.6} {:>9.3} {:>9.4} {:>3}",
                        rep.labels[i],
                        rep.estimates[i],
                        t[i],
                        res.thresholds[i],
                        decision(res.reject[i])
                    )?;
                    if let Some(p) = &res.adjusted_p {
                        write!(w, " {:>10.4}", p[i])?;
                    }
                    writeln!(w)?;
                }
            }
        }
        Format::Csv => {
            let mut c = csv::Writer::from_writer(w);
            c.write_record([
                "procedure",
                "hypothesis",
                "estimate",
                "t",
                "threshold",
                "decision",
                "adjusted_p",
            ])?;
            for res in &rep.results {
                let t = &rep.statistics_for(res.procedure).t_stats;
                for i in 0..rep.labels.len() {
                    let p = res
                        .adjusted_p
                        .as_ref()
                        .map(|p| p[i].to_string())
                        .unwrap_or_default();
                    c.write_record([
                        res.procedure.name().to_string(),
                        rep.labels[i].clone(),
                        rep.estimates[i].to_string(),
                        t[i].to_string(),
                        res.thresholds[i].to_string(),
                        decision(res.reject[i]).to_string(),
                        p,
                    ])?;
                }
            }
            c.flush()?;
        }
        Format::Json => {
            let mut v = serde_json::to_value(rep)?;
            v["model"] = json!(f.model.name());
            write_json(w, &v)?;
        }
    }
    Ok(())
}

pub fn write_summary(w: &mut dyn Write, s: &SimSummary, format: Format) -> Res {
    let rows = s.metric_rows();
    match format {
        Format::Text => {
            writeln!(
                w,
                "{}  model {}  truth {}  alpha {}",
                s.name, s.model, s.truth, s.alpha
            )?;
            writeln!(
                w,
                "replicates {}  completed {}  failures {}",
                s.replicates, s.completed, s.failures
            )?;
            writeln!(w)?;
            writeln!(
                w,
                "{:<12} {:<14} {:>9} {:>9}",
                "procedure", "metric", "estimate", "mc_se"
            )?;
            for (p, m, e, se) in &rows {
                writeln!(w, "{p:<12} {m:<14} {e:>9.4} {se:>9.4}")?;
            }
            let o = &s.ordering;
            writeln!(w)?;
            writeln!(
                w,
                "ordering checks over {}: holm<bonferroni {}  holm global mismatch {}  mnq<bonferroni {}",
                o.checked, o.holm_not_superset, o.holm_global_mismatch, o.mnq_not_superset
            )?;
        }
        Format::Csv => {
            let mut c = csv::Writer::from_writer(w);
            c.write_record([
                "scenario",
                "procedure",
                "metric",
                "estimate",
                "mc_se",
                "replicates",
            ])?;
            for (p, m, e, se) in &rows {
                c.write_record([
                    s.name.clone(),
                    p.clone(),
                    m.clone(),
                    e.to_string(),
                    se.to_string(),
                    s.completed.to_string(),
                ])?;
            }
            c.flush()?;
        }
        Format::Json => write_json(w, &serde_json::to_value(s)?)?,
    }
    Ok(())
}

pub fn write_scan(
    w: &mut dyn Write,
    cfg: &ExperimentConfig,
    rows: &[ScanRow],
    format: Format,
) -> Res {
    let target = if cfg.procedures.contains(&Procedure::Mnq) {
        Procedure::Mnq
    } else {
        cfg.procedures[0]
    };
    match format {
        Format::Text => {
            writeln!(
                w,
                "{}  {} FWER by cluster count  alpha {}",
                cfg.name,
                target.name(),
                cfg.alpha
            )?;
            writeln!(w)?;
            writeln!(
                w,
                "{:>7} {:>9} {:>9} {:>9} {:>8}",
                "n", "fwer", "mc_se", "2se ok", "failures"
            )?;
            for r in rows {
                writeln!(
                    w,
                    "{:>7} {:>9.4} {:>9.4} {:>9} {:>8}",
                    r.n, r.fwer.estimate, r.fwer.mc_se, r.within_two_se, r.failures
                )?;
            }
        }
        Format::Csv => {
            let mut c = csv::Writer::from_writer(w);
            c.write_record([
                "scenario",
                "procedure",
                "n",
                "fwer",
                "mc_se",
                "replicates",
                "within_two_se",
            ])?;
            for r in rows {
                c.write_record([
                    cfg.name.clone(),
                    target.name().to_string(),
                    r.n.to_string(),
                    r.fwer.estimate.to_string(),
                    r.fwer.mc_se.to_string(),
                    r.fwer.total.to_string(),
                    r.within_two_se.to_string(),
                ])?;
            }
            c.flush()?;
        }
        Format::Json => write_json(
            w,
            &json!({"scenario": cfg.name, "procedure": target.name(), "rows": rows}),
        )?,
    }
    Ok(())
}
