//! Adaptive functional principal component analysis.
//!
//! Curves are modelled as `Y_i(t) = μ(t) + Σ_k ξ_ik φ_k(t) + ε`, with
//! `μ = W β_μ`, `φ_k = W β_k`, `ξ_i ~ N(0, I)` in the likelihood and each
//! function carrying its own tuning diagonal. Each iteration solves for all
//! coefficients jointly, orthogonalizes the components, predicts scores by
//! BLUP, and re-estimates the tuning parameters and `σ²`.

mod design;
mod init;
mod rotate;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{self, make_knots, wand_transform, TransformedBasis};
use crate::error::{Error, Result};
use crate::smooth::{has_converged, signed_tuning, update_tuning_block, TuningMode, DEFAULT_BETA_FLOOR};

pub use design::{blup_scores, fpca_objective, update_coefficients, update_sigma2_fpca, Design};
pub use init::initialize;
pub use rotate::{orthogonalize, truncate_pve, QuadratureGrid, Rotation, GRAM_EIGEN_FLOOR, QUAD_POINTS};

/// Components whose score variance falls below this fraction of the
/// leading one are dropped during fitting.
pub const DEAD_COMPONENT_REL_TOL: f64 = 1e-12;

/// One observed curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub t: Vec<f64>,
    pub y: Vec<f64>,
}

impl Subject {
    pub fn new(id: impl Into<String>, t: Vec<f64>, y: Vec<f64>) -> Self {
        Self { id: id.into(), t, y }
    }
}

/// Curves observed on possibly different grids over a common domain.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    subjects: Vec<Subject>,
    domain: (f64, f64),
}

impl FunctionalDataset {
    /// Dataset whose domain is the range of all abscissae.
    pub fn new(subjects: Vec<Subject>) -> Result<Self> {
        let mut lower = f64::INFINITY;
        let mut upper = f64::NEG_INFINITY;
        for s in &subjects {
            for &t in &s.t {
                lower = lower.min(t);
                upper = upper.max(t);
            }
        }
        Self::with_domain(subjects, (lower, upper))
    }

    pub fn with_domain(subjects: Vec<Subject>, domain: (f64, f64)) -> Result<Self> {
        if subjects.len() < 2 {
            return Err(Error::DataValidation(format!(
                "at least 2 subjects are required, got {}",
                subjects.len()
            )));
        }
        let (a, b) = domain;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidDomain(format!("[{a}, {b}]")));
        }
        for s in &subjects {
            if s.t.len() != s.y.len() {
                return Err(Error::DataValidation(format!(
                    "subject {}: {} abscissae but {} values",
                    s.id,
                    s.t.len(),
                    s.y.len()
                )));
            }
            if s.t.is_empty() {
                return Err(Error::DataValidation(format!("subject {} has no observations", s.id)));
            }
            if s.y.iter().any(|v| !v.is_finite()) {
                return Err(Error::DataValidation(format!("subject {} has non-finite values", s.id)));
            }
            if let Some(&t) = s.t.iter().find(|t| !(a..=b).contains(*t)) {
                return Err(Error::OutOfDomain { value: t, lower: a, upper: b });
            }
        }
        Ok(Self { subjects, domain })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Total number of observations `Σ J_i`.
    pub fn n_obs(&self) -> usize {
        self.subjects.iter().map(|s| s.t.len()).sum()
    }

    /// True when every observed value is identical.
    pub fn is_flat(&self) -> bool {
        let first = self.subjects[0].y[0];
        self.subjects.iter().all(|s| s.y.iter().all(|&v| v == first))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpcaConfig {
    /// Basis dimension `P`.
    pub dim: usize,
    pub k_init: usize,
    pub pve: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub beta_floor: f64,
    pub mode: TuningMode,
    pub seed: u64,
}

impl Default for FpcaConfig {
    fn default() -> Self {
        Self {
            dim: 40,
            k_init: 15,
            pve: 0.99,
            max_iter: 200,
            tol: 1e-6,
            beta_floor: DEFAULT_BETA_FLOOR,
            mode: TuningMode::Adaptive,
            seed: 0,
        }
    }
}

impl FpcaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < basis::MIN_DIM {
            return Err(Error::InvalidDimension(format!(
                "P = {} but at least {} basis functions are needed",
                self.dim,
                basis::MIN_DIM
            )));
        }
        if self.k_init < 1 || self.k_init >= self.dim {
            return Err(Error::InvalidConfig(format!(
                "K_init = {} must satisfy 1 <= K_init < P = {}",
                self.k_init, self.dim
            )));
        }
        if !(self.pve > 0.0 && self.pve <= 1.0) {
            return Err(Error::InvalidConfig(format!("pve = {} must lie in (0, 1]", self.pve)));
        }
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

/// Working parameters of the iteration.
#[derive(Debug, Clone)]
pub struct FpcaState {
    pub beta_mu: DVector<f64>,
    /// `P x K`, one column per component.
    pub beta_phi: DMatrix<f64>,
    /// `I x K`.
    pub scores: DMatrix<f64>,
    pub lambda_mu: DVector<f64>,
    pub lambda_phi: Vec<DVector<f64>>,
    pub sigma2: f64,
    /// Score second moments after the latest rotation.
    pub variances: DVector<f64>,
}

impl FpcaState {
    fn lambda_blocks(&self) -> Vec<DVector<f64>> {
        std::iter::once(self.lambda_mu.clone()).chain(self.lambda_phi.iter().cloned()).collect()
    }

    fn apply_rotation(&mut self, rot: Rotation) {
        self.beta_phi = rot.beta_phi;
        self.scores = rot.scores;
        self.variances = rot.variances;
    }

    /// Drops components with negligible score variance.
    fn prune(&mut self) {
        let k = self.variances.len();
        if k == 0 {
            return;
        }
        let cut = DEAD_COMPONENT_REL_TOL * self.variances[0];
        let keep = self.variances.iter().take_while(|&&v| v > cut && v > 0.0).count();
        if keep < k {
            log::debug!("dropping {} components with negligible variance", k - keep);
            self.beta_phi = self.beta_phi.columns(0, keep).into_owned();
            self.scores = self.scores.columns(0, keep).into_owned();
            self.variances = self.variances.rows(0, keep).into_owned();
            self.lambda_phi.truncate(keep);
        }
    }

    /// Moves the score means into the mean function.
    fn center_scores(&mut self) {
        for j in 0..self.scores.ncols() {
            let m = self.scores.column(j).mean();
            self.scores.column_mut(j).add_scalar_mut(-m);
            self.beta_mu.axpy(m, &self.beta_phi.column(j), 1.0);
        }
    }
}

/// Tuning diagonals for the mean and each component.
pub fn update_tuning(
    beta_mu: &DVector<f64>,
    beta_phi: &DMatrix<f64>,
    floor: f64,
    mode: TuningMode,
) -> (DVector<f64>, Vec<DVector<f64>>) {
    let mu = update_tuning_block(beta_mu, floor, mode);
    let phi = beta_phi
        .column_iter()
        .map(|c| update_tuning_block(&c.into_owned(), floor, mode))
        .collect();
    (mu, phi)
}

/// A fitted FPCA model, truncated to the retained components.
#[derive(Debug, Clone)]
pub struct FpcaModel {
    pub basis: TransformedBasis,
    pub subject_ids: Vec<String>,
    pub beta_mu: DVector<f64>,
    /// `P x K`.
    pub beta_phi: DMatrix<f64>,
    /// `I x K`.
    pub scores: DMatrix<f64>,
    pub lambda_mu: DVector<f64>,
    pub lambda_phi: Vec<DVector<f64>>,
    pub sigma2: f64,
    /// Score variances of the retained components.
    pub eigenvalues: DVector<f64>,
    /// Cumulative variance share of the retained components.
    pub pve_cum: DVector<f64>,
    /// Score variances of all `k_init` fitted components; dropped ones are 0.
    pub fitted_eigenvalues: Vec<f64>,
    pub k_init: usize,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub n_iter: usize,
    pub mode: TuningMode,
    pub warnings: Vec<String>,
}

impl FpcaModel {
    pub fn n_components(&self) -> usize {
        self.beta_phi.ncols()
    }

    pub fn mean_values(&self, grid: &[f64]) -> Result<Vec<f64>> {
        self.basis.eval_function(grid, &self.beta_mu)
    }

    /// `len(grid) x K` matrix of component values.
    pub fn fpc_values(&self, grid: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.basis.eval(grid, 0)?.values * &self.beta_phi)
    }

    /// `μ(t) + Σ_k xi_k φ_k(t)` on `grid`.
    pub fn curve(&self, xi: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
        if xi.len() != self.n_components() {
            return Err(Error::DataValidation(format!(
                "expected {} scores, got {}",
                self.n_components(),
                xi.len()
            )));
        }
        let coef = &self.beta_mu + &self.beta_phi * DVector::from_column_slice(xi);
        self.basis.eval_function(grid, &coef)
    }

    /// Pointwise penalty function of the mean; `None` where undefined.
    pub fn lambda_mu_of_t(&self, grid: &[f64]) -> Result<Vec<Option<f64>>> {
        let tuning = signed_tuning(&self.beta_mu, &self.lambda_mu);
        basis::penalty_fn_values(&self.basis, &self.beta_mu, &tuning, grid)
    }

    /// Pointwise penalty function of component `k`.
    pub fn lambda_phi_of_t(&self, k: usize, grid: &[f64]) -> Result<Vec<Option<f64>>> {
        let beta = self.beta_phi.column(k).into_owned();
        let tuning = signed_tuning(&beta, &self.lambda_phi[k]);
        basis::penalty_fn_values(&self.basis, &beta, &tuning, grid)
    }
}

/// Fitted curve for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub subject: usize,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

/// Evaluates subject `subject`'s truncated expansion on `grid`.
pub fn reconstruct(model: &FpcaModel, subject: usize, grid: &[f64]) -> Result<Reconstruction> {
    if subject >= model.scores.nrows() {
        return Err(Error::DataValidation(format!("no subject with index {subject}")));
    }
    let xi: Vec<f64> = model.scores.row(subject).iter().copied().collect();
    let values = model.curve(&xi, grid)?;
    Ok(Reconstruction { subject, grid: grid.to_vec(), values })
}

/// Fits the adaptive (or baseline) FPCA model.
pub fn fit_afpca(data: &FunctionalDataset, config: &FpcaConfig) -> Result<FpcaModel> {
    config.validate()?;
    let tb = wand_transform(&make_knots(data.domain(), config.dim)?)?;
    let design = Design::new(data, &tb)?;
    let quad = QuadratureGrid::new(&tb, QUAD_POINTS)?;
    let mut warnings = Vec::new();
    let mut warn = |msg: String| {
        log::warn!("{msg}");
        warnings.push(msg);
    };

    let mut k_init = config.k_init;
    if k_init > data.len() - 1 {
        k_init = data.len() - 1;
        warn(format!(
            "K_init = {} exceeds I - 1 = {k_init}; using {k_init} components",
            config.k_init
        ));
    }
    let needed = (k_init + 1) * config.dim;
    if data.n_obs() < needed {
        warn(format!(
            "{} observations for {needed} coefficients; the fit may be poorly determined",
            data.n_obs()
        ));
    }
    let ids = data.subjects().iter().map(|s| s.id.clone()).collect();

    if data.is_flat() {
        warn("all observed values are identical; returning a mean-only model".into());
        let k0 = DMatrix::zeros(data.len(), 0);
        let (beta_mu, beta_phi) = update_coefficients(&design, &k0, &[DVector::zeros(config.dim)], 0.0)?;
        let sigma2 = update_sigma2_fpca(&design, &beta_mu, &beta_phi, &k0)?;
        return Ok(FpcaModel {
            basis: tb,
            subject_ids: ids,
            lambda_mu: DVector::zeros(config.dim),
            beta_mu,
            beta_phi,
            scores: k0,
            lambda_phi: Vec::new(),
            sigma2,
            eigenvalues: DVector::zeros(0),
            pve_cum: DVector::zeros(0),
            fitted_eigenvalues: vec![0.0; k_init],
            k_init,
            objective_trace: Vec::new(),
            converged: true,
            n_iter: 0,
            mode: config.mode,
            warnings,
        });
    }

    let mut state = initialize(&design, &quad, k_init, config.seed)?;
    state.prune();
    (state.lambda_mu, state.lambda_phi) =
        update_tuning(&state.beta_mu, &state.beta_phi, config.beta_floor, config.mode);

    let mut trace = Vec::with_capacity(config.max_iter);
    let mut converged = false;
    for iter in 0..config.max_iter {
        let (beta_mu, beta_phi) =
            update_coefficients(&design, &state.scores, &state.lambda_blocks(), state.sigma2)?;
        state.beta_mu = beta_mu;
        let rot = orthogonalize(&beta_phi, &state.scores, &quad)?;
        state.apply_rotation(rot);
        state.prune();
        state.scores = design::blup_all(&design, &state.beta_mu, &state.beta_phi, state.sigma2)?;
        state.center_scores();
        (state.lambda_mu, state.lambda_phi) =
            update_tuning(&state.beta_mu, &state.beta_phi, config.beta_floor, config.mode);
        state.sigma2 = update_sigma2_fpca(&design, &state.beta_mu, &state.beta_phi, &state.scores)?;
        let obj = fpca_objective(
            &design,
            &state.beta_mu,
            &state.beta_phi,
            &state.scores,
            &state.lambda_blocks(),
            state.sigma2,
        );
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
    if !converged {
        log::info!("FPCA stopped after {} iterations without meeting the tolerance", trace.len());
    }

    let rot = orthogonalize(&state.beta_phi, &state.scores, &quad)?;
    state.apply_rotation(rot);
    state.prune();
    // Rotation mixes components, so their tuning diagonals are re-derived.
    (state.lambda_mu, state.lambda_phi) =
        update_tuning(&state.beta_mu, &state.beta_phi, config.beta_floor, config.mode);

    let mut fitted_eigenvalues: Vec<f64> = state.variances.iter().copied().collect();
    fitted_eigenvalues.resize(k_init, 0.0);
    let k_keep = truncate_pve(&fitted_eigenvalues, config.pve).min(state.variances.len());
    let total: f64 = fitted_eigenvalues.iter().sum();
    let mut cum = 0.0;
    let pve_cum = DVector::from_iterator(
        k_keep,
        fitted_eigenvalues.iter().take(k_keep).map(|v| {
            cum += v;
            if total > 0.0 {
                (cum / total).min(1.0)
            } else {
                0.0
            }
        }),
    );
    Ok(FpcaModel {
        basis: tb,
        subject_ids: ids,
        beta_mu: state.beta_mu,
        beta_phi: state.beta_phi.columns(0, k_keep).into_owned(),
        scores: state.scores.columns(0, k_keep).into_owned(),
        lambda_mu: state.lambda_mu,
        lambda_phi: state.lambda_phi.into_iter().take(k_keep).collect(),
        sigma2: state.sigma2,
        eigenvalues: state.variances.rows(0, k_keep).into_owned(),
        pve_cum,
        fitted_eigenvalues,
        k_init,
        n_iter: trace.len(),
        objective_trace: trace,
        converged,
        mode: config.mode,
        warnings,
    })
}
