//! Adaptive scatterplot smoothing.
//!
//! `f(t) = W(t) β` is fitted by cycling three closed-form updates:
//!
//! 1. `β = (WᵀW + σ² Λ)⁻¹ Wᵀy`
//! 2. `σ² = ‖y − Wβ‖² / J`
//! 3. `Λ = diag(0, 0, 1/β₃², …, 1/β_P²)` with `|β_p|` floored at `1e-6`
//!
//! starting from `Λ = 0`, so the first iterate is the unpenalized fit. The
//! monitored objective is the penalized negative log-likelihood
//! `J/2·log σ² + ‖y − Wβ‖²/(2σ²) + ½ βᵀΛβ`, whose β-stationary point is the
//! update in step 1.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{self, BasisMatrix, TransformedBasis, NULL_DIM};
use crate::error::{Error, Result};
use crate::linalg::solve_spd;

/// Lower bound on `|β_p|` when forming adaptive weights.
pub const DEFAULT_BETA_FLOOR: f64 = 1e-6;
/// Absolute floor of the convergence threshold.
pub const ABS_TOL_FLOOR: f64 = 1e-10;

/// How the penalized diagonal of `Λ` is re-estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TuningMode {
    /// One weight per coefficient, `1 / max(|β_p|, floor)²`.
    Adaptive,
    /// A single weight per function, `(P − 2) / Σ_{p≥3} β_p²`.
    Baseline,
}

impl TuningMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TuningMode::Adaptive => "adaptive",
            TuningMode::Baseline => "baseline",
        }
    }
}

impl std::fmt::Display for TuningMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TuningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adaptive" => Ok(TuningMode::Adaptive),
            "baseline" | "nonadaptive" | "nonadaptive-baseline" => Ok(TuningMode::Baseline),
            other => Err(Error::InvalidConfig(format!("unknown mode \"{other}\""))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothConfig {
    /// Basis dimension `P`.
    pub dim: usize,
    pub max_iter: usize,
    /// Relative convergence threshold on the objective change.
    pub tol: f64,
    pub beta_floor: f64,
    pub mode: TuningMode,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        Self {
            dim: 40,
            max_iter: 100,
            tol: 1e-6,
            beta_floor: DEFAULT_BETA_FLOOR,
            mode: TuningMode::Adaptive,
        }
    }
}

impl SmoothConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("tol must be positive".into()));
        }
        if !(self.beta_floor > 0.0) {
            return Err(Error::InvalidConfig("beta_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Result of a scatterplot smoothing fit.
#[derive(Debug, Clone)]
pub struct SmoothFit {
    pub basis: TransformedBasis,
    pub beta: DVector<f64>,
    /// Diagonal of `Λ` (the squared tuning parameters).
    pub lambda_diag: DVector<f64>,
    pub sigma2: f64,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub n_iter: usize,
    /// Fitted values at the input abscissae.
    pub fitted: Vec<f64>,
    pub mode: TuningMode,
}

impl SmoothFit {
    pub fn predict(&self, t: &[f64]) -> Result<Vec<f64>> {
        self.basis.eval_function(t, &self.beta)
    }

    /// Signed tuning parameters `λ_p`, with `λ_p² = Λ_pp` and the sign of `β_p`.
    pub fn tuning(&self) -> DVector<f64> {
        signed_tuning(&self.beta, &self.lambda_diag)
    }

    /// Pointwise penalty function on `grid`; `None` where undefined.
    pub fn lambda_of_t(&self, grid: &[f64]) -> Result<Vec<Option<f64>>> {
        basis::penalty_fn_values(&self.basis, &self.beta, &self.tuning(), grid)
    }
}

/// Converts a `Λ` diagonal back to signed tuning parameters: `λ_p = sign(β_p)·√Λ_pp`.
/// For the adaptive rule this is `1/β_p` (up to the floor).
pub fn signed_tuning(beta: &DVector<f64>, lambda_diag: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        beta.len(),
        beta.iter().zip(lambda_diag.iter()).map(|(b, l)| {
            let root = l.max(0.0).sqrt();
            if *b < 0.0 {
                -root
            } else {
                root
            }
        }),
    )
}

/// Solves `(WᵀW + σ² Λ) β = Wᵀy`.
pub fn update_beta(
    w: &BasisMatrix,
    y: &DVector<f64>,
    lambda_diag: &DVector<f64>,
    sigma2: f64,
) -> Result<DVector<f64>> {
    let w = &w.values;
    if w.nrows() != y.len() || w.ncols() != lambda_diag.len() {
        return Err(Error::DataValidation("non-conformable design and tuning".into()));
    }
    let wt = w.transpose();
    let h = &wt * w;
    let rhs = &wt * y;
    solve_penalized(h, &rhs, lambda_diag, sigma2)
}

fn solve_penalized(
    mut h: DMatrix<f64>,
    rhs: &DVector<f64>,
    lambda_diag: &DVector<f64>,
    sigma2: f64,
) -> Result<DVector<f64>> {
    for (p, l) in lambda_diag.iter().enumerate() {
        h[(p, p)] += sigma2 * l;
    }
    solve_spd(&h, rhs).map_err(|e| match e {
        Error::RankDeficient(msg) => Error::RankDeficient(format!(
            "{msg}; fewer distinct observations than basis functions, try a smaller P"
        )),
        other => other,
    })
}

/// Adaptive weights: zero for the two unpenalized columns, then
/// `1 / max(|β_p|, floor)²`.
pub fn update_lambda(beta: &DVector<f64>, floor: f64) -> DVector<f64> {
    DVector::from_iterator(
        beta.len(),
        beta.iter().enumerate().map(|(p, b)| {
            if p < NULL_DIM {
                0.0
            } else {
                let m = b.abs().max(floor);
                1.0 / (m * m)
            }
        }),
    )
}

/// Single-parameter weights: `(P − 2) / Σ_{p≥3} β_p²` on every penalized
/// entry. The sum is floored at `(P − 2)·floor²`, so the weight never
/// exceeds the adaptive rule's ceiling `1/floor²`.
pub fn update_lambda_scalar(beta: &DVector<f64>, floor: f64) -> DVector<f64> {
    let n_pen = beta.len().saturating_sub(NULL_DIM);
    if n_pen == 0 {
        return DVector::zeros(beta.len());
    }
    let ss: f64 = beta.iter().skip(NULL_DIM).map(|b| b * b).sum();
    let ss = ss.max(n_pen as f64 * floor * floor);
    let lam = n_pen as f64 / ss;
    DVector::from_iterator(
        beta.len(),
        (0..beta.len()).map(|p| if p < NULL_DIM { 0.0 } else { lam }),
    )
}

/// Dispatches to the tuning rule for `mode`.
pub fn update_tuning_block(beta: &DVector<f64>, floor: f64, mode: TuningMode) -> DVector<f64> {
    match mode {
        TuningMode::Adaptive => update_lambda(beta, floor),
        TuningMode::Baseline => update_lambda_scalar(beta, floor),
    }
}

/// Mean squared residual.
pub fn update_sigma2(residuals: &[f64]) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::DataValidation("empty residual vector".into()));
    }
    Ok(residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64)
}

/// `J/2·log σ² + RSS/(2σ²) + ½ βᵀΛβ`; σ² is clamped to the smallest
/// positive normal number so that exact fits stay finite.
pub fn objective(rss: f64, n_obs: usize, sigma2: f64, beta: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
    let s2 = sigma2.max(f64::MIN_POSITIVE);
    let pen: f64 = beta.iter().zip(lambda.iter()).map(|(b, l)| l * b * b).sum();
    0.5 * n_obs as f64 * s2.ln() + rss / (2.0 * s2) + 0.5 * pen
}

/// Convergence test shared by the smoother and FPCA.
pub(crate) fn has_converged(prev: f64, current: f64, tol: f64) -> bool {
    (current - prev).abs() < (tol * current.abs()).max(ABS_TOL_FLOOR)
}

/// Adaptive scatterplot smoother with the default adaptive tuning rule.
pub fn fit_adaptive_smooth(t: &[f64], y: &[f64], config: &SmoothConfig) -> Result<SmoothFit> {
    let config = SmoothConfig { mode: TuningMode::Adaptive, ..config.clone() };
    fit_smooth(t, y, &config)
}

/// Scatterplot smoother using `config.mode` for the tuning update.
pub fn fit_smooth(t: &[f64], y: &[f64], config: &SmoothConfig) -> Result<SmoothFit> {
    config.validate()?;
    if t.len() != y.len() {
        return Err(Error::DataValidation(format!(
            "t has {} entries but y has {}",
            t.len(),
            y.len()
        )));
    }
    if t.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::DataValidation("non-finite abscissa or observation".into()));
    }
    let n = t.len();
    if n < config.dim {
        return Err(Error::RankDeficient(format!(
            "{n} observations for {} basis functions; use P <= {n}",
            config.dim
        )));
    }
    let lower = t.iter().copied().fold(f64::INFINITY, f64::min);
    let upper = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let knots = basis::make_knots((lower, upper), config.dim)?;
    let tb = basis::wand_transform(&knots)?;
    let w = tb.eval(t, 0)?;
    let yv = DVector::from_column_slice(y);

    let wt = w.values.transpose();
    let gram = &wt * &w.values;
    let wty = &wt * &yv;

    let dim = config.dim;
    let mut lambda = DVector::zeros(dim);
    let mut sigma2 = 0.0;
    let mut beta = DVector::zeros(dim);
    let mut trace = Vec::with_capacity(config.max_iter);
    let mut converged = false;
    let mut resid = vec![0.0; n];

    for iter in 0..config.max_iter {
        beta = solve_penalized(gram.clone(), &wty, &lambda, sigma2)?;
        let fitted = &w.values * &beta;
        for i in 0..n {
            resid[i] = y[i] - fitted[i];
        }
        sigma2 = update_sigma2(&resid)?;
        lambda = update_tuning_block(&beta, config.beta_floor, config.mode);
        let rss: f64 = resid.iter().map(|r| r * r).sum();
        let obj = objective(rss, n, sigma2, &beta, &lambda);
        if !obj.is_finite() {
            return Err(Error::NumericalFailure(format!("objective is {obj} at iteration {}", iter + 1)));
        }
        let done = trace.last().is_some_and(|&prev| has_converged(prev, obj, config.tol));
        trace.push(obj);
        if done {
            converged = true;
            break;
        }
    }
    let fitted = (&w.values * &beta).iter().copied().collect();
    Ok(SmoothFit {
        basis: tb,
        beta,
        lambda_diag: lambda,
        sigma2,
        n_iter: trace.len(),
        objective_trace: trace,
        converged,
        fitted,
        mode: config.mode,
    })
}
