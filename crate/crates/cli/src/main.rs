//! `afpca`: adaptive scatterplot smoothing and adaptive FPCA from the
//! command line.

mod artifacts;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use afpca::simulate::{run_study, StudyConfig, TruthKind};
use afpca::{Error, ErrorCategory, TuningMode};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "afpca", version, about = "Adaptive smoothing and adaptive functional PCA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Smooth one scatterplot (CSV columns t,y).
    FitSmooth(SmoothArgs),
    /// Fit adaptive FPCA to long-format curves (CSV columns subject_id,t,y).
    FitFpca(FpcaArgs),
    /// Run the seeded simulation study.
    Simulate(SimulateArgs),
    /// Time the smoother and FPCA on generated data.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Adaptive,
    Baseline,
}

impl From<ModeArg> for TuningMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Adaptive => TuningMode::Adaptive,
            ModeArg::Baseline => TuningMode::Baseline,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TruthArg {
    Piecewise,
    Homogeneous,
}

#[derive(Debug, Args)]
struct SmoothArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of basis functions P.
    #[arg(long, default_value_t = 40)]
    p_basis: usize,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Adaptive)]
    mode: ModeArg,
}

#[derive(Debug, Args)]
struct FpcaArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40)]
    p_basis: usize,
    /// Initial number of components K.
    #[arg(long, default_value_t = 15)]
    k_init: usize,
    /// Proportion of variance the retained components must explain.
    #[arg(long, default_value_t = 0.99)]
    pve: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Adaptive)]
    mode: ModeArg,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    replicates: usize,
    /// Use 100 replicates per cell.
    #[arg(long)]
    full_study: bool,
    /// Subject counts, comma separated.
    #[arg(long = "n-subjects", value_delimiter = ',', default_values_t = [25usize, 50, 100])]
    n_subjects: Vec<usize>,
    /// Noise variances, comma separated.
    #[arg(long = "sigma2", value_delimiter = ',', default_values_t = [0.1f64, 0.2])]
    sigma2: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    grid_size: usize,
    #[arg(long, default_value_t = 40)]
    p_basis: usize,
    #[arg(long, default_value_t = 15)]
    k_init: usize,
    #[arg(long, default_value_t = 0.99)]
    pve: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    /// Methods to compare, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ModeArg::Adaptive, ModeArg::Baseline])]
    mode: Vec<ModeArg>,
    #[arg(long, value_enum, default_value_t = TruthArg::Piecewise)]
    truth: TruthArg,
    /// Scale the piecewise truth by the literal integral constants instead
    /// of normalizing it.
    #[arg(long)]
    compat_paper_constants: bool,
    /// Write fitted components of every replicate under OUT/fpcs.
    #[arg(long)]
    dump_fpcs: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 25)]
    n_subjects: usize,
    #[arg(long, default_value_t = 0.1)]
    sigma2: f64,
    #[arg(long, default_value_t = 40)]
    p_basis: usize,
    #[arg(long, default_value_t = 15)]
    k_init: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.kind().to_string();
            eprint!("{e}");
            report(ErrorCategory::Usage, &message);
            return ExitCode::from(ErrorCategory::Usage.exit_code() as u8);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            report(category, &e.to_string());
            ExitCode::from(category.exit_code() as u8)
        }
    }
}

/// One machine-parsable line on stderr.
fn report(category: ErrorCategory, message: &str) {
    let flat = message.replace(['\n', '\r'], " ");
    eprintln!("error category={} message={:?}", category.as_str(), flat);
}

fn run(command: Command) -> afpca::Result<()> {
    let start = Instant::now();
    match command {
        Command::FitSmooth(a) => {
            prepare_out(&a.out)?;
            let config = afpca::SmoothConfig {
                dim: a.p_basis,
                max_iter: a.max_iter,
                tol: a.tol,
                mode: a.mode.into(),
                ..Default::default()
            };
            let written = artifacts::write_smooth(&a.input, &a.out, &config)?;
            let params = json!({
                "input": a.input,
                "p_basis": config.dim,
                "max_iter": config.max_iter,
                "tol": config.tol,
                "beta_floor": config.beta_floor,
                "mode": config.mode,
                "grid_points": artifacts::GRID_POINTS,
            });
            write_manifest(&a.out, "fit-smooth", params, Value::Null, written, start)
        }
        Command::FitFpca(a) => {
            prepare_out(&a.out)?;
            let config = afpca::FpcaConfig {
                dim: a.p_basis,
                k_init: a.k_init,
                pve: a.pve,
                max_iter: a.max_iter,
                tol: a.tol,
                mode: a.mode.into(),
                seed: a.seed,
                ..Default::default()
            };
            config.validate()?;
            let written = artifacts::fit_fpca(&a.input, &a.out, &config)?;
            let params = json!({
                "input": a.input,
                "p_basis": config.dim,
                "k_init": config.k_init,
                "pve": config.pve,
                "max_iter": config.max_iter,
                "tol": config.tol,
                "beta_floor": config.beta_floor,
                "mode": config.mode,
                "grid_points": artifacts::GRID_POINTS,
            });
            write_manifest(&a.out, "fit-fpca", params, json!(config.seed), written, start)
        }
        Command::Simulate(a) => {
            prepare_out(&a.out)?;
            if a.compat_paper_constants && matches!(a.truth, TruthArg::Homogeneous) {
                return Err(Error::InvalidConfig(
                    "--compat-paper-constants applies to the piecewise truth only".into(),
                ));
            }
            let truth = match (a.truth, a.compat_paper_constants) {
                (TruthArg::Homogeneous, _) => TruthKind::Homogeneous,
                (TruthArg::Piecewise, true) => TruthKind::PaperConstants,
                (TruthArg::Piecewise, false) => TruthKind::Piecewise,
            };
            let config = StudyConfig {
                i_values: a.n_subjects.clone(),
                sigma2_values: a.sigma2.clone(),
                replicates: if a.full_study { 100 } else { a.replicates },
                grid_size: a.grid_size,
                dim: a.p_basis,
                k_init: a.k_init,
                pve: a.pve,
                max_iter: a.max_iter,
                tol: a.tol,
                base_seed: a.seed,
                truth,
                methods: a.mode.iter().map(|&m| m.into()).collect(),
                dump_dir: a.dump_fpcs.then(|| a.out.join("fpcs")),
            };
            let report = run_study(&config)?;
            report.write_csv(a.out.join("report.csv"))?;
            report.write_timings_csv(a.out.join("timings.csv"))?;
            afpca::io::write_json(a.out.join("summary.json"), &report.summary_json())?;
            let mut written = vec!["report.csv", "timings.csv", "summary.json"];
            if a.dump_fpcs {
                written.push("fpcs/");
            }
            let params = json!({
                "n_subjects": config.i_values,
                "sigma2": config.sigma2_values,
                "replicates": config.replicates,
                "full_study": a.full_study,
                "grid_size": config.grid_size,
                "p_basis": config.dim,
                "k_init": config.k_init,
                "pve": config.pve,
                "max_iter": config.max_iter,
                "tol": config.tol,
                "mode": config.methods,
                "truth": config.truth,
                "compat_paper_constants": a.compat_paper_constants,
                "dump_fpcs": a.dump_fpcs,
            });
            let written = written.into_iter().map(String::from).collect();
            write_manifest(&a.out, "simulate", params, json!(config.base_seed), written, start)
        }
        Command::Bench(a) => {
            prepare_out(&a.out)?;
            let written = artifacts::bench(&a.out, a.n_subjects, a.sigma2, a.p_basis, a.k_init, a.repeats, a.seed)?;
            let params = json!({
                "n_subjects": a.n_subjects,
                "sigma2": a.sigma2,
                "p_basis": a.p_basis,
                "k_init": a.k_init,
                "repeats": a.repeats,
            });
            write_manifest(&a.out, "bench", params, json!(a.seed), written, start)
        }
    }
}

fn prepare_out(dir: &Path) -> afpca::Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write_manifest(
    out: &Path,
    command: &str,
    parameters: Value,
    seed: Value,
    artifacts: Vec<String>,
    start: Instant,
) -> afpca::Result<()> {
    let unix_secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = json!({
        "command": command,
        "parameters": parameters,
        "seed": seed,
        "versions": {
            "afpca": afpca::VERSION,
            "afpca-cli": env!("CARGO_PKG_VERSION"),
        },
        "artifacts": artifacts,
        "finished_unix_secs": unix_secs,
        "wall_clock_secs": start.elapsed().as_secs_f64(),
    });
    afpca::io::write_json(out.join("manifest.json"), &manifest)
}
