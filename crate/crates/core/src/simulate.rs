//! Synthetic functional data with locally varying smoothness, accuracy
//! metrics and the seeded adaptive-versus-baseline benchmark.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpca::{fit_afpca, FpcaConfig, FpcaModel, FunctionalDataset, Subject};
use crate::io::{fmt_f64, fmt_opt, write_table};
use crate::quadrature::{composite_gauss_legendre, linspace, trapezoid};
use crate::smooth::TuningMode;

/// Score variances `η²₁`, `η²₂`.
pub const SCORE_VARIANCES: [f64; 2] = [4.0, 1.0];
pub const DEFAULT_GRID_SIZE: usize = 100;
/// Sine frequencies (in units of π) of the mean and the two components.
const FREQ_MU: f64 = 1.0;
const FREQ_PHI: [f64; 2] = [4.0, 8.0];

/// `t^{-3/2} sin(fπ t^{1/4})` for `t > 1/2`, zero otherwise.
pub fn raw_profile(t: f64, freq: f64) -> f64 {
    if t > 0.5 {
        t.powf(-1.5) * (freq * PI * t.powf(0.25)).sin()
    } else {
        0.0
    }
}

/// `∫_{1/2}^1 f(t) dt` for a function smooth on `[1/2, 1]`.
fn integral_upper_half<F: Fn(f64) -> f64>(f: F) -> f64 {
    composite_gauss_legendre(f, 0.5, 1.0, 64, 16)
}

/// `∫_{1/2}^1 t^{-3/2} sin(fπ t^{1/4}) dt`.
pub fn raw_integral(freq: f64) -> f64 {
    integral_upper_half(|t| t.powf(-1.5) * (freq * PI * t.powf(0.25)).sin())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthKind {
    /// Piecewise truth, mean and components scaled to unit L2 norm and the
    /// second component orthogonalized against the first.
    Piecewise,
    /// Piecewise truth multiplied by the literal constants `c = ∫_{1/2}^1 g`.
    PaperConstants,
    /// Single-frequency sinusoids over the whole domain.
    Homogeneous,
}

/// Evaluable mean and component functions on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub kind: TruthKind,
    pub c_mu: f64,
    pub c_phi: [f64; 2],
    /// `φ₂ = (c₂ g₈ − gs_coef·φ₁) / gs_scale`.
    pub gs_coef: f64,
    pub gs_scale: f64,
    pub score_variances: [f64; 2],
}

impl TruthSpec {
    pub fn new(kind: TruthKind) -> Self {
        match kind {
            TruthKind::Piecewise => Self::piecewise(),
            TruthKind::PaperConstants => Self::paper_constants(),
            TruthKind::Homogeneous => Self::homogeneous(),
        }
    }

    pub fn piecewise() -> Self {
        let inv_norm = |f: f64| {
            let sq = integral_upper_half(|t| raw_profile_right(t, f).powi(2));
            1.0 / sq.sqrt()
        };
        let c_mu = inv_norm(FREQ_MU);
        let c_phi = [inv_norm(FREQ_PHI[0]), inv_norm(FREQ_PHI[1])];
        let ip = integral_upper_half(|t| {
            c_phi[0] * raw_profile_right(t, FREQ_PHI[0]) * c_phi[1] * raw_profile_right(t, FREQ_PHI[1])
        });
        let (gs_coef, gs_scale) = if ip.abs() > 1e-8 { (ip, (1.0 - ip * ip).sqrt()) } else { (0.0, 1.0) };
        Self {
            kind: TruthKind::Piecewise,
            c_mu,
            c_phi,
            gs_coef,
            gs_scale,
            score_variances: SCORE_VARIANCES,
        }
    }

    pub fn paper_constants() -> Self {
        Self {
            kind: TruthKind::PaperConstants,
            c_mu: raw_integral(FREQ_MU),
            c_phi: [raw_integral(FREQ_PHI[0]), raw_integral(FREQ_PHI[1])],
            gs_coef: 0.0,
            gs_scale: 1.0,
            score_variances: SCORE_VARIANCES,
        }
    }

    pub fn homogeneous() -> Self {
        Self {
            kind: TruthKind::Homogeneous,
            c_mu: 1.0,
            c_phi: [2f64.sqrt(), 2f64.sqrt()],
            gs_coef: 0.0,
            gs_scale: 1.0,
            score_variances: SCORE_VARIANCES,
        }
    }

    pub fn mean(&self, t: f64) -> f64 {
        match self.kind {
            TruthKind::Homogeneous => self.c_mu * (PI * t).cos(),
            _ => self.c_mu * raw_profile(t, FREQ_MU),
        }
    }

    /// Component `k` (0 or 1).
    pub fn fpc(&self, k: usize, t: f64) -> f64 {
        match (self.kind, k) {
            (TruthKind::Homogeneous, 0) => self.c_phi[0] * (2.0 * PI * t).sin(),
            (TruthKind::Homogeneous, _) => self.c_phi[1] * (2.0 * PI * t).cos(),
            (_, 0) => self.c_phi[0] * raw_profile(t, FREQ_PHI[0]),
            (_, _) => {
                let raw = self.c_phi[1] * raw_profile(t, FREQ_PHI[1]);
                (raw - self.gs_coef * self.fpc(0, t)) / self.gs_scale
            }
        }
    }
}

impl Default for TruthSpec {
    fn default() -> Self {
        Self::piecewise()
    }
}

/// The profile without the indicator, for integrals over `[1/2, 1]`.
fn raw_profile_right(t: f64, freq: f64) -> f64 {
    t.powf(-1.5) * (freq * PI * t.powf(0.25)).sin()
}

/// A generated dataset with the quantities it was generated from.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub dataset: FunctionalDataset,
    pub grid: Vec<f64>,
    /// `I x 2` true scores.
    pub scores: DMatrix<f64>,
    /// Noise-free curves on the grid, one per subject.
    pub noiseless: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// True components on the grid.
    pub fpcs: [Vec<f64>; 2],
}

/// Draws `I` curves `μ + ξ₁φ₁ + ξ₂φ₂ + ε` on an equally spaced grid of
/// [0, 1] from the piecewise truth.
pub fn generate_dataset(n_subjects: usize, sigma2: f64, seed: u64) -> Result<SimulatedData> {
    generate_with(&TruthSpec::piecewise(), n_subjects, sigma2, DEFAULT_GRID_SIZE, seed)
}

pub fn generate_with(
    truth: &TruthSpec,
    n_subjects: usize,
    sigma2: f64,
    grid_size: usize,
    seed: u64,
) -> Result<SimulatedData> {
    if n_subjects < 2 {
        return Err(Error::InvalidConfig(format!("I = {n_subjects}; at least 2 subjects are required")));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidConfig(format!("sigma2 = {sigma2} must be positive")));
    }
    if grid_size < 2 {
        return Err(Error::InvalidConfig("grid size must be at least 2".into()));
    }
    let grid = linspace(0.0, 1.0, grid_size);
    let mean: Vec<f64> = grid.iter().map(|&t| truth.mean(t)).collect();
    let fpcs = [0, 1].map(|k| grid.iter().map(|&t| truth.fpc(k, t)).collect::<Vec<f64>>());
    let sd = truth.score_variances.map(f64::sqrt);
    let noise_sd = sigma2.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut scores = DMatrix::zeros(n_subjects, 2);
    for i in 0..n_subjects {
        for k in 0..2 {
            let z: f64 = StandardNormal.sample(&mut rng);
            scores[(i, k)] = sd[k] * z;
        }
    }
    let mut noiseless = Vec::with_capacity(n_subjects);
    let mut subjects = Vec::with_capacity(n_subjects);
    for i in 0..n_subjects {
        let x: Vec<f64> = (0..grid_size)
            .map(|j| mean[j] + scores[(i, 0)] * fpcs[0][j] + scores[(i, 1)] * fpcs[1][j])
            .collect();
        let y = x
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                v + noise_sd * z
            })
            .collect();
        subjects.push(Subject::new(format!("{}", i + 1), grid.clone(), y));
        noiseless.push(x);
    }
    let dataset = FunctionalDataset::with_domain(subjects, (0.0, 1.0))?;
    Ok(SimulatedData { dataset, grid, scores, noiseless, mean, fpcs })
}

/// Trapezoid-rule integrated squared error.
pub fn ise(estimate: &[f64], truth: &[f64], grid: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() || truth.len() != grid.len() {
        return Err(Error::DataValidation(format!(
            "lengths differ: estimate {}, truth {}, grid {}",
            estimate.len(),
            truth.len(),
            grid.len()
        )));
    }
    let sq: Vec<f64> = estimate.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).collect();
    Ok(trapezoid(grid, &sq))
}

/// ISE minimized over the sign of `estimate`.
pub fn ise_sign_min(estimate: &[f64], truth: &[f64], grid: &[f64]) -> Result<f64> {
    let plus = ise(estimate, truth, grid)?;
    let flipped: Vec<f64> = estimate.iter().map(|v| -v).collect();
    Ok(plus.min(ise(&flipped, truth, grid)?))
}

/// SplitMix64 finalizer.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one replicate, independent of scheduling.
pub fn derive_seed(base: u64, cell: u64, replicate: u64) -> u64 {
    splitmix(splitmix(splitmix(base) ^ cell) ^ replicate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub i_values: Vec<usize>,
    pub sigma2_values: Vec<f64>,
    pub replicates: usize,
    pub grid_size: usize,
    /// Basis dimension `P`.
    pub dim: usize,
    pub k_init: usize,
    pub pve: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub base_seed: u64,
    pub truth: TruthKind,
    pub methods: Vec<TuningMode>,
    /// Directory for per-replicate CSVs of the fitted components.
    #[serde(skip)]
    pub dump_dir: Option<PathBuf>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            i_values: vec![25, 50, 100],
            sigma2_values: vec![0.1, 0.2],
            replicates: 20,
            grid_size: DEFAULT_GRID_SIZE,
            dim: 40,
            k_init: 15,
            pve: 0.99,
            max_iter: 200,
            tol: 1e-6,
            base_seed: 2024,
            truth: TruthKind::Piecewise,
            methods: vec![TuningMode::Adaptive, TuningMode::Baseline],
            dump_dir: None,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 1 {
            return Err(Error::InvalidConfig("replicates must be at least 1".into()));
        }
        if self.grid_size < 2 {
            return Err(Error::InvalidConfig("grid size must be at least 2".into()));
        }
        if self.i_values.is_empty() || self.sigma2_values.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidConfig("empty study design".into()));
        }
        if let Some(&i) = self.i_values.iter().find(|&&i| i < 2) {
            return Err(Error::InvalidConfig(format!("I = {i}; at least 2 subjects are required")));
        }
        if let Some(&s) = self.sigma2_values.iter().find(|&&s| !(s > 0.0)) {
            return Err(Error::InvalidConfig(format!("sigma2 = {s} must be positive")));
        }
        self.fpca_config(TuningMode::Adaptive, 0).validate()
    }

    pub fn fpca_config(&self, mode: TuningMode, seed: u64) -> FpcaConfig {
        FpcaConfig {
            dim: self.dim,
            k_init: self.k_init,
            pve: self.pve,
            max_iter: self.max_iter,
            tol: self.tol,
            mode,
            seed,
            ..FpcaConfig::default()
        }
    }

    /// `(I, σ²)` cells in report order.
    pub fn cells(&self) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for &i in &self.i_values {
            for &s in &self.sigma2_values {
                out.push((i, s));
            }
        }
        out
    }
}

/// Metrics of one method on one replicate. Failed fits carry `NaN` metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub method: TuningMode,
    pub n_subjects: usize,
    pub sigma2: f64,
    pub replicate: usize,
    pub seed: u64,
    pub ok: bool,
    /// Mean over subjects of the ISE against the noise-free curve.
    pub mise: f64,
    /// Mean over subjects of the ISE against the observed curve.
    pub mise_noisy: f64,
    pub ise_mean: f64,
    pub ise_fpc1: f64,
    pub ise_fpc2: f64,
    pub k_selected: usize,
    pub n_iter: usize,
    pub converged: bool,
    pub runtime_secs: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    /// Linear-interpolation quartiles of the finite entries; `NaN` if none.
    pub fn of(values: &[f64]) -> Self {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        v.sort_by(f64::total_cmp);
        Self { q1: quantile(&v, 0.25), median: quantile(&v, 0.5), q3: quantile(&v, 0.75) }
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Aggregates of one method in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: TuningMode,
    pub n_subjects: usize,
    pub sigma2: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mise: Quartiles,
    pub mise_noisy: Quartiles,
    pub ise_mean: Quartiles,
    pub ise_fpc1: Quartiles,
    pub ise_fpc2: Quartiles,
    pub k_selected: Quartiles,
    /// Share of successful replicates with exactly two components.
    pub frac_k2: f64,
    /// Share of successful replicates with two or three components.
    pub frac_k2_or_3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: StudyConfig,
    pub rows: Vec<ReplicateResult>,
    pub summaries: Vec<CellSummary>,
}

const REPORT_HEADER: [&str; 15] = [
    "method",
    "n_subjects",
    "sigma2",
    "replicate",
    "seed",
    "status",
    "mise",
    "mise_noisy",
    "ise_mean",
    "ise_fpc1",
    "ise_fpc2",
    "k_selected",
    "n_iter",
    "converged",
    "error",
];

impl MetricsReport {
    pub fn summary(&self, method: TuningMode, n_subjects: usize, sigma2: f64) -> Option<&CellSummary> {
        self.summaries
            .iter()
            .find(|s| s.method == method && s.n_subjects == n_subjects && s.sigma2 == sigma2)
    }

    pub fn rows_for(&self, method: TuningMode, n_subjects: usize, sigma2: f64) -> Vec<&ReplicateResult> {
        self.rows
            .iter()
            .filter(|r| r.method == method && r.n_subjects == n_subjects && r.sigma2 == sigma2)
            .collect()
    }

    /// One row per method, cell and replicate. Wall-clock times are kept out
    /// of this file so that it is reproducible byte for byte.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let rows = self.rows.iter().map(|r| {
            let num = |v: f64| fmt_opt(Some(v));
            vec![
                r.method.to_string(),
                r.n_subjects.to_string(),
                fmt_f64(r.sigma2),
                r.replicate.to_string(),
                r.seed.to_string(),
                if r.ok { "ok" } else { "failed" }.to_string(),
                num(r.mise),
                num(r.mise_noisy),
                num(r.ise_mean),
                num(r.ise_fpc1),
                num(r.ise_fpc2),
                if r.ok { r.k_selected.to_string() } else { "NA".into() },
                r.n_iter.to_string(),
                r.converged.to_string(),
                r.error.clone().unwrap_or_default(),
            ]
        });
        write_table(path, &REPORT_HEADER, rows)
    }

    pub fn write_timings_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let rows = self.rows.iter().map(|r| {
            vec![
                r.method.to_string(),
                r.n_subjects.to_string(),
                fmt_f64(r.sigma2),
                r.replicate.to_string(),
                fmt_f64(r.runtime_secs),
            ]
        });
        write_table(path, &["method", "n_subjects", "sigma2", "replicate", "runtime_secs"], rows)
    }

    /// Configuration and per-cell aggregates.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "config": self.config,
            "summaries": self.summaries,
        })
    }
}

/// Runs every method on every replicate of every cell.
///
/// Replicates run in parallel; each draws its data from
/// `derive_seed(base_seed, cell, replicate)`, and all methods of a replicate
/// see the same data. A failed fit becomes a failed row.
pub fn run_study(config: &StudyConfig) -> Result<MetricsReport> {
    config.validate()?;
    if let Some(dir) = &config.dump_dir {
        std::fs::create_dir_all(dir)?;
    }
    let truth = TruthSpec::new(config.truth);
    let jobs: Vec<(usize, usize, f64, usize)> = config
        .cells()
        .into_iter()
        .enumerate()
        .flat_map(|(c, (i, s))| (0..config.replicates).map(move |r| (c, i, s, r)))
        .collect();
    let per_job: Vec<Vec<ReplicateResult>> = jobs
        .par_iter()
        .map(|&(cell, n, sigma2, rep)| run_replicate(config, &truth, cell, n, sigma2, rep))
        .collect();
    let mut rows = Vec::with_capacity(per_job.len() * config.methods.len());
    for &method in &config.methods {
        for job in &per_job {
            rows.extend(job.iter().filter(|r| r.method == method).cloned());
        }
    }
    let mut summaries = Vec::new();
    for &method in &config.methods {
        for (n, s) in config.cells() {
            summaries.push(summarize(method, n, s, &rows));
        }
    }
    Ok(MetricsReport { config: config.clone(), rows, summaries })
}

fn run_replicate(
    config: &StudyConfig,
    truth: &TruthSpec,
    cell: usize,
    n: usize,
    sigma2: f64,
    rep: usize,
) -> Vec<ReplicateResult> {
    let seed = derive_seed(config.base_seed, cell as u64, rep as u64);
    let data = generate_with(truth, n, sigma2, config.grid_size, seed);
    config
        .methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let outcome = data.as_ref().map_err(|e| e.to_string()).and_then(|d| {
                let model =
                    fit_afpca(&d.dataset, &config.fpca_config(method, seed)).map_err(|e| e.to_string())?;
                if let Some(dir) = &config.dump_dir {
                    let path = dir.join(format!("fpcs_{method}_I{n}_s{sigma2}_r{rep}.csv"));
                    dump_fpcs(&path, &model, &d.grid).map_err(|e| e.to_string())?;
                }
                score_model(&model, d).map_err(|e| e.to_string())
            });
            let runtime_secs = start.elapsed().as_secs_f64();
            let mut row = ReplicateResult {
                method,
                n_subjects: n,
                sigma2,
                replicate: rep,
                seed,
                ok: false,
                mise: f64::NAN,
                mise_noisy: f64::NAN,
                ise_mean: f64::NAN,
                ise_fpc1: f64::NAN,
                ise_fpc2: f64::NAN,
                k_selected: 0,
                n_iter: 0,
                converged: false,
                runtime_secs,
                error: None,
            };
            match outcome {
                Ok(m) => {
                    row.ok = true;
                    row.mise = m.mise;
                    row.mise_noisy = m.mise_noisy;
                    row.ise_mean = m.ise_mean;
                    row.ise_fpc1 = m.ise_fpc[0];
                    row.ise_fpc2 = m.ise_fpc[1];
                    row.k_selected = m.k;
                    row.n_iter = m.n_iter;
                    row.converged = m.converged;
                }
                Err(e) => {
                    log::warn!("{method} fit failed (I={n}, sigma2={sigma2}, replicate {rep}): {e}");
                    row.error = Some(e);
                }
            }
            row
        })
        .collect()
}

/// Accuracy of a fitted model against the generating truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelScore {
    pub mise: f64,
    pub mise_noisy: f64,
    pub ise_mean: f64,
    pub ise_fpc: [f64; 2],
    pub k: usize,
    pub n_iter: usize,
    pub converged: bool,
}

/// Compares `model` with the truth stored in `data`. A missing component
/// counts as the zero function.
pub fn score_model(model: &FpcaModel, data: &SimulatedData) -> Result<ModelScore> {
    let grid = &data.grid;
    let mean = model.mean_values(grid)?;
    let phi = model.fpc_values(grid)?;
    let ise_mean = ise(&mean, &data.mean, grid)?;
    let mut ise_fpc = [0.0; 2];
    for (k, slot) in ise_fpc.iter_mut().enumerate() {
        let est: Vec<f64> = if k < phi.ncols() {
            phi.column(k).iter().copied().collect()
        } else {
            vec![0.0; grid.len()]
        };
        *slot = ise_sign_min(&est, &data.fpcs[k], grid)?;
    }
    let mut mise = 0.0;
    let mut mise_noisy = 0.0;
    let n = data.dataset.len();
    for (i, subject) in data.dataset.subjects().iter().enumerate() {
        let xi: Vec<f64> = model.scores.row(i).iter().copied().collect();
        let rec = model.curve(&xi, grid)?;
        mise += ise(&rec, &data.noiseless[i], grid)?;
        mise_noisy += ise(&rec, &subject.y, grid)?;
    }
    Ok(ModelScore {
        mise: mise / n as f64,
        mise_noisy: mise_noisy / n as f64,
        ise_mean,
        ise_fpc,
        k: model.n_components(),
        n_iter: model.n_iter,
        converged: model.converged,
    })
}

fn dump_fpcs(path: &Path, model: &FpcaModel, grid: &[f64]) -> Result<()> {
    let phi = model.fpc_values(grid)?;
    let mean = model.mean_values(grid)?;
    let mut header = vec!["t".to_string(), "mu".to_string()];
    header.extend((1..=phi.ncols()).map(|k| format!("phi{k}")));
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..grid.len()).map(|j| {
        let mut row = vec![fmt_f64(grid[j]), fmt_f64(mean[j])];
        row.extend((0..phi.ncols()).map(|k| fmt_f64(phi[(j, k)])));
        row
    });
    write_table(path, &header_ref, rows)
}

fn summarize(method: TuningMode, n: usize, sigma2: f64, rows: &[ReplicateResult]) -> CellSummary {
    let cell: Vec<&ReplicateResult> = rows
        .iter()
        .filter(|r| r.method == method && r.n_subjects == n && r.sigma2 == sigma2)
        .collect();
    let ok: Vec<&&ReplicateResult> = cell.iter().filter(|r| r.ok).collect();
    let col = |f: fn(&ReplicateResult) -> f64| Quartiles::of(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
    let share = |pred: fn(usize) -> bool| {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().filter(|r| pred(r.k_selected)).count() as f64 / ok.len() as f64
        }
    };
    CellSummary {
        method,
        n_subjects: n,
        sigma2,
        n_ok: ok.len(),
        n_failed: cell.len() - ok.len(),
        mise: col(|r| r.mise),
        mise_noisy: col(|r| r.mise_noisy),
        ise_mean: col(|r| r.ise_mean),
        ise_fpc1: col(|r| r.ise_fpc1),
        ise_fpc2: col(|r| r.ise_fpc2),
        k_selected: col(|r| r.k_selected as f64),
        frac_k2: share(|k| k == 2),
        frac_k2_or_3: share(|k| k == 2 || k == 3),
    }
}
