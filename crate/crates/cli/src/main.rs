use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use clmult_core::data::ResponseKind;
use clmult_core::harness::{
    preset, preset_names, run_experiment, sample_size_scan, ExperimentConfig,
};
use clmult_core::inference::parse_procedures;
use clmult_core::models::{CovariateLevel, FitOptions};
use clmult_core::{
    build_contrasts, fit, generate, read_clustered_csv, read_contrasts_file, run_tests,
    write_clustered, ContrastFamily, ContrastKind, ModelKind, Procedure, QmcConfig, TestOptions,
};

mod report;

use report::Format;

/// Seed used when --seed is not given.
const DEFAULT_SEED: u64 = 20_240_501;

#[derive(Parser)]
#[command(
    name = "clmult",
    version,
    about = "Composite-likelihood fits and simultaneous tests for clustered data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a composite-likelihood model and report sandwich standard errors.
    Fit(FitArgs),
    /// Fit a model and test a contrast family with several procedures.
    Test(TestArgs),
    /// Run a replicated simulation experiment.
    Simulate(SimulateArgs),
    /// Write one simulated dataset as CSV.
    Generate(GenerateArgs),
    /// List the built-in simulation presets.
    Presets,
}

#[derive(Args)]
struct Output {
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Write the report here instead of standard output.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_parser = parse_model)]
    model: ModelKind,
    /// CSV with header cluster_id,y,x1,...,xp.
    #[arg(long)]
    data: PathBuf,
    /// Quadratic exponential main effects from each observation or the cluster mean.
    #[arg(long, value_enum, default_value_t = Level::Observation)]
    covariate_level: Level,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Observation,
    ClusterMean,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Report H^-1 standard errors instead of the sandwich.
    #[arg(long)]
    naive: bool,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// many-to-one:B (1-based baseline), all-pairwise, or file:PATH.
    #[arg(long, default_value = "many-to-one:1")]
    contrasts: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Comma-separated: mnq, naive, bonferroni, sidak, holm, scheffe, tukey.
    #[arg(long, default_value = "mnq,bonferroni,sidak,holm,scheffe")]
    methods: String,
    /// Add the naive MNQ procedure (Gamma = H^-1).
    #[arg(long)]
    naive: bool,
    /// Also compute MNQ adjusted p-values.
    #[arg(long)]
    p_values: bool,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct ScenarioSource {
    /// Built-in preset name (see `clmult presets`).
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: ScenarioSource,
    #[arg(long)]
    replicates: Option<usize>,
    /// Overrides both the data and the QMC seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0: one per core).
    #[arg(long)]
    workers: Option<usize>,
    /// Comma-separated procedures, replacing the preset's list.
    #[arg(long)]
    methods: Option<String>,
    /// Comma-separated cluster counts: report MNQ FWER for each instead.
    #[arg(long)]
    scan: Option<String>,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    source: ScenarioSource,
    #[arg(long, default_value_t = 0)]
    replicate: u64,
    #[arg(long)]
    seed: Option<u64>,
    /// Destination CSV (standard output when absent).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: clmult_core::Error| e.to_string())
}

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

/// Exit status for a fit that did not converge or hit separation.
const NOT_CONVERGED: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Test(a) => cmd_test(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Presets => cmd_presets(),
    };
    match outcome {
        Ok(code) => code,
        // A closed downstream pipe (e.g. `| head`) is not a failure.
        Err(e)
            if e.downcast_ref::<io::Error>()
                .is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e.downcast_ref::<clmult_core::Error>() {
                Some(
                    clmult_core::Error::NonConvergence { .. }
                    | clmult_core::Error::Separation { .. },
                ) => ExitCode::from(NOT_CONVERGED),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn sink(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(
            File::create(p).map_err(|e| format!("cannot create {}: {e}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn response_kind(model: ModelKind) -> Option<ResponseKind> {
    match model {
        ModelKind::Mvn => Some(ResponseKind::Continuous),
        ModelKind::Gamma => Some(ResponseKind::Positive),
        ModelKind::Probit | ModelKind::Quadexp => None,
    }
}

fn fit_model(
    a: &ModelArgs,
    naive: bool,
) -> CliResult<(clmult_core::ClusteredDataset, clmult_core::FitResult)> {
    let d = read_clustered_csv(&a.data, response_kind(a.model))
        .map_err(|e| format!("{}: {e}", a.data.display()))?;
    let opts = FitOptions {
        max_iter: a.max_iter,
        naive,
        covariate_level: match a.covariate_level {
            Level::Observation => CovariateLevel::Observation,
            Level::ClusterMean => CovariateLevel::ClusterMean,
        },
        ..FitOptions::default()
    };
    let f = fit(a.model, &d, &opts)?;
    Ok((d, f))
}

fn cmd_fit(a: FitArgs) -> CliResult<ExitCode> {
    let (d, f) = fit_model(&a.model, a.naive)?;
    let mut w = sink(a.out.output.as_deref())?;
    report::write_fit(&mut w, &f, &d, a.out.format)?;
    w.flush()?;
    if f.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("warning: the fit did not meet its convergence tolerances");
        Ok(ExitCode::from(NOT_CONVERGED))
    }
}

fn parse_contrasts(spec: &str, p: usize) -> CliResult<ContrastFamily> {
    if spec == "all-pairwise" {
        return Ok(build_contrasts(ContrastKind::AllPairwise, p)?);
    }
    if let Some(b) = spec.strip_prefix("many-to-one:") {
        let b: usize = b
            .parse()
            .map_err(|_| format!("baseline '{b}' is not a positive integer"))?;
        if b == 0 || b > p {
            return Err(format!("baseline must lie in 1..={p}, got {b}").into());
        }
        return Ok(build_contrasts(
            ContrastKind::ManyToOne { baseline: b - 1 },
            p,
        )?);
    }
    if let Some(path) = spec.strip_prefix("file:") {
        return Ok(read_contrasts_file(path)?);
    }
    Err(format!("unknown contrast spec '{spec}' (many-to-one:B, all-pairwise, file:PATH)").into())
}

fn cmd_test(a: TestArgs) -> CliResult<ExitCode> {
    let mut procedures = parse_procedures(&a.methods)?;
    if a.naive && !procedures.contains(&Procedure::NaiveMnq) {
        procedures.push(Procedure::NaiveMnq);
    }
    let (_, f) = fit_model(&a.model, false)?;
    let cf = parse_contrasts(&a.contrasts, f.n_beta)?;
    let opts = TestOptions {
        alpha: a.alpha,
        procedures,
        qmc: QmcConfig::default().with_seed(a.seed),
        mnq_p_values: a.p_values,
    };
    let rep = run_tests(&f, &cf, &opts)?;
    let mut w = sink(a.out.output.as_deref())?;
    report::write_test(&mut w, &rep, &f, a.out.format)?;
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn load_config(src: &ScenarioSource) -> CliResult<ExperimentConfig> {
    match (&src.preset, &src.config) {
        (Some(name), _) => Ok(preset(name)?),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            let cfg: ExperimentConfig =
                serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
            Ok(cfg)
        }
        (None, None) => Err("either --preset or --config is required".into()),
    }
}

fn cmd_simulate(a: SimulateArgs) -> CliResult<ExitCode> {
    let mut cfg = load_config(&a.source)?;
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    if let Some(s) = a.seed {
        cfg.scenario.seed = s;
        cfg.qmc.seed = s;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    if let Some(m) = &a.methods {
        cfg.procedures = parse_procedures(m)?;
    }
    let mut w = sink(a.out.output.as_deref())?;
    match &a.scan {
        Some(list) => {
            let sizes = list
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| format!("bad cluster count '{s}'"))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let rows = sample_size_scan(&cfg, &sizes)?;
            report::write_scan(&mut w, &cfg, &rows, a.out.format)?;
        }
        None => {
            let s = run_experiment(&cfg)?;
            report::write_summary(&mut w, &s, a.out.format)?;
        }
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_generate(a: GenerateArgs) -> CliResult<ExitCode> {
    let mut cfg = load_config(&a.source)?;
    if let Some(s) = a.seed {
        cfg.scenario.seed = s;
    }
    let d = generate(&cfg.scenario, a.replicate)?;
    let mut w = sink(a.output.as_deref())?;
    write_clustered(&d, &mut w)?;
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_presets() -> CliResult<ExitCode> {
    let mut out = io::stdout().lock();
    for name in preset_names() {
        writeln!(out, "{name}")?;
    }
    Ok(ExitCode::SUCCESS)
}
