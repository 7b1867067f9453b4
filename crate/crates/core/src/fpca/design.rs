//! Per-subject design bookkeeping and the closed-form FPCA updates.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::basis::TransformedBasis;
use crate::error::{Error, Result};
use crate::linalg::solve_spd;

use super::FunctionalDataset;

/// Subjects observed on bit-identical grids share one basis matrix.
#[derive(Debug, Clone)]
pub(crate) struct GridGroup {
    pub t: Vec<f64>,
    /// `J x P` basis matrix `W(t)`.
    pub w: DMatrix<f64>,
    pub wtw: DMatrix<f64>,
    /// Subject indices, in dataset order.
    pub members: Vec<usize>,
    /// `J x members` observations, one column per member.
    pub y: DMatrix<f64>,
}

/// Basis evaluations for every subject of a dataset.
#[derive(Debug, Clone)]
pub struct Design {
    dim: usize,
    n_subjects: usize,
    n_obs: usize,
    pub(crate) groups: Vec<GridGroup>,
    /// `(group, column)` of each subject.
    location: Vec<(usize, usize)>,
}

impl Design {
    pub fn new(data: &FunctionalDataset, tb: &TransformedBasis) -> Result<Self> {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut groups: Vec<(Vec<f64>, Vec<usize>)> = Vec::new();
        for (i, s) in data.subjects().iter().enumerate() {
            let key: Vec<u64> = s.t.iter().map(|v| v.to_bits()).collect();
            let g = *index.entry(key).or_insert_with(|| {
                groups.push((s.t.clone(), Vec::new()));
                groups.len() - 1
            });
            groups[g].1.push(i);
        }
        let mut location = vec![(0, 0); data.len()];
        let mut out = Vec::with_capacity(groups.len());
        for (g, (t, members)) in groups.into_iter().enumerate() {
            let w = tb.eval(&t, 0)?.values;
            let wtw = w.transpose() * &w;
            let mut y = DMatrix::zeros(t.len(), members.len());
            for (c, &i) in members.iter().enumerate() {
                y.set_column(c, &DVector::from_column_slice(&data.subjects()[i].y));
                location[i] = (g, c);
            }
            out.push(GridGroup { t, w, wtw, members, y });
        }
        Ok(Self {
            dim: tb.dim(),
            n_subjects: data.len(),
            n_obs: data.n_obs(),
            groups: out,
            location,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// True when every subject is observed on the same grid.
    pub fn is_common_grid(&self) -> bool {
        self.groups.len() == 1
    }

    /// `W(t_i)` for subject `i`.
    pub fn subject_basis(&self, i: usize) -> &DMatrix<f64> {
        &self.groups[self.location[i].0].w
    }

    pub fn subject_values(&self, i: usize) -> DVector<f64> {
        let (g, c) = self.location[i];
        self.groups[g].y.column(c).into_owned()
    }

    pub fn subject_grid(&self, i: usize) -> &[f64] {
        &self.groups[self.location[i].0].t
    }
}

fn check_blocks(design: &Design, k: usize, lambda: &[DVector<f64>]) -> Result<()> {
    if lambda.len() != k + 1 || lambda.iter().any(|l| l.len() != design.dim) {
        return Err(Error::DataValidation(format!(
            "expected {} tuning blocks of length {}",
            k + 1,
            design.dim
        )));
    }
    Ok(())
}

/// Solves `(ΘᵀΘ + σ² Λ) B = ΘᵀY` for `B = [β_μ; β_1; …; β_K]`.
///
/// `Θ_i = (1, ξ_i)ᵀ ⊗ W(t_i)` is never formed; its cross-products are
/// accumulated per grid group. `lambda` holds the `K + 1` diagonal blocks,
/// mean first. Returns `β_μ` and the `P x K` matrix `β_Φ`.
pub fn update_coefficients(
    design: &Design,
    scores: &DMatrix<f64>,
    lambda: &[DVector<f64>],
    sigma2: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let k = scores.ncols();
    let p = design.dim;
    if scores.nrows() != design.n_subjects {
        return Err(Error::DataValidation("score matrix has the wrong number of rows".into()));
    }
    check_blocks(design, k, lambda)?;
    let n = (k + 1) * p;
    let mut h = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for g in &design.groups {
        let mut a = DMatrix::zeros(k + 1, k + 1);
        let mut ty = DMatrix::zeros(g.t.len(), k + 1);
        for (c, &i) in g.members.iter().enumerate() {
            let mut theta = DVector::zeros(k + 1);
            theta[0] = 1.0;
            for j in 0..k {
                theta[j + 1] = scores[(i, j)];
            }
            a.ger(1.0, &theta, &theta, 1.0);
            let yc = g.y.column(c);
            for j in 0..=k {
                ty.column_mut(j).axpy(theta[j], &yc, 1.0);
            }
        }
        h += a.kronecker(&g.wtw);
        let wr = g.w.transpose() * ty;
        for j in 0..=k {
            let mut seg = rhs.rows_mut(j * p, p);
            seg += wr.column(j);
        }
    }
    for (b, block) in lambda.iter().enumerate() {
        for (q, l) in block.iter().enumerate() {
            h[(b * p + q, b * p + q)] += sigma2 * l;
        }
    }
    let sol = solve_spd(&h, &rhs).map_err(|e| match e {
        Error::RankDeficient(msg) => Error::RankDeficient(format!(
            "{msg} in the coefficient solve; try a smaller K_init or P"
        )),
        other => other,
    })?;
    let beta_mu = sol.rows(0, p).into_owned();
    let beta_phi = DMatrix::from_column_slice(p, k, &sol.as_slice()[p..]);
    Ok((beta_mu, beta_phi))
}

/// Best linear unbiased predictor of one subject's scores,
/// `ξ_i = (ΦᵀΦ + σ² I)⁻¹ Φᵀ r_i` with `Φ = W(t_i) β_Φ` and `r_i = y_i − W(t_i) β_μ`.
pub fn blup_scores(phi: &DMatrix<f64>, resid: &DVector<f64>, sigma2: f64) -> Result<DVector<f64>> {
    if phi.nrows() != resid.len() {
        return Err(Error::DataValidation("non-conformable component matrix and residual".into()));
    }
    let mut h = phi.transpose() * phi;
    for j in 0..h.nrows() {
        h[(j, j)] += sigma2;
    }
    solve_spd(&h, &(phi.transpose() * resid))
}

/// BLUP scores for every subject, as an `I x K` matrix.
pub(crate) fn blup_all(
    design: &Design,
    beta_mu: &DVector<f64>,
    beta_phi: &DMatrix<f64>,
    sigma2: f64,
) -> Result<DMatrix<f64>> {
    let k = beta_phi.ncols();
    let mut scores = DMatrix::zeros(design.n_subjects, k);
    if k == 0 {
        return Ok(scores);
    }
    for g in &design.groups {
        let phi = &g.w * beta_phi;
        let mean = &g.w * beta_mu;
        let mut h = phi.transpose() * &phi;
        for j in 0..k {
            h[(j, j)] += sigma2;
        }
        let mut resid = g.y.clone();
        for mut col in resid.column_iter_mut() {
            col -= &mean;
        }
        let rhs = phi.transpose() * resid;
        let sol = match h.clone().cholesky() {
            Some(chol) => chol.solve(&rhs),
            None => {
                let mut sol = DMatrix::zeros(k, rhs.ncols());
                for c in 0..rhs.ncols() {
                    sol.set_column(c, &solve_spd(&h, &rhs.column(c).into_owned())?);
                }
                sol
            }
        };
        for (c, &i) in g.members.iter().enumerate() {
            for j in 0..k {
                scores[(i, j)] = sol[(j, c)];
            }
        }
    }
    Ok(scores)
}

/// Pooled residual sum of squares `Σ_i ‖y_i − W(t_i)(β_μ + β_Φ ξ_i)‖²`.
pub(crate) fn residual_ss(
    design: &Design,
    beta_mu: &DVector<f64>,
    beta_phi: &DMatrix<f64>,
    scores: &DMatrix<f64>,
) -> f64 {
    let mut rss = 0.0;
    for g in &design.groups {
        let mut coef = DMatrix::zeros(design.dim, g.members.len());
        for (c, &i) in g.members.iter().enumerate() {
            let mut col = beta_mu.clone();
            for j in 0..beta_phi.ncols() {
                col.axpy(scores[(i, j)], &beta_phi.column(j), 1.0);
            }
            coef.set_column(c, &col);
        }
        let fitted = &g.w * coef;
        rss += (&g.y - fitted).norm_squared();
    }
    rss
}

/// Pooled mean squared residual.
pub fn update_sigma2_fpca(
    design: &Design,
    beta_mu: &DVector<f64>,
    beta_phi: &DMatrix<f64>,
    scores: &DMatrix<f64>,
) -> Result<f64> {
    if design.n_obs == 0 {
        return Err(Error::DataValidation("no observations".into()));
    }
    if scores.nrows() != design.n_subjects || scores.ncols() != beta_phi.ncols() {
        return Err(Error::DataValidation("score matrix does not match the components".into()));
    }
    Ok(residual_ss(design, beta_mu, beta_phi, scores) / design.n_obs as f64)
}

/// Penalized negative log-likelihood
/// `Σ RSS_i/(2σ²) + Σ ‖ξ_i‖²/2 + N/2·log σ² + ½ Σ_blocks βᵀΛβ`.
pub fn fpca_objective(
    design: &Design,
    beta_mu: &DVector<f64>,
    beta_phi: &DMatrix<f64>,
    scores: &DMatrix<f64>,
    lambda: &[DVector<f64>],
    sigma2: f64,
) -> f64 {
    let s2 = sigma2.max(f64::MIN_POSITIVE);
    let rss = residual_ss(design, beta_mu, beta_phi, scores);
    let mut pen = quad_form(beta_mu, &lambda[0]);
    for j in 0..beta_phi.ncols() {
        pen += quad_form(&beta_phi.column(j).into_owned(), &lambda[j + 1]);
    }
    rss / (2.0 * s2) + 0.5 * scores.norm_squared() + 0.5 * design.n_obs as f64 * s2.ln() + 0.5 * pen
}

fn quad_form(beta: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
    beta.iter().zip(lambda.iter()).map(|(b, l)| l * b * b).sum()
}
