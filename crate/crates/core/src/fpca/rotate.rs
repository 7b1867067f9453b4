//! Orthogonalization of component estimates and PVE truncation.

use nalgebra::{DMatrix, DVector};

use crate::basis::TransformedBasis;
use crate::error::{Error, Result};
use crate::linalg::{argmax_abs, sym_eigen_desc, symmetrize};
use crate::quadrature::{linspace, trapezoid_weights};

/// Points of the quadrature grid used for component inner products.
pub const QUAD_POINTS: usize = 1024;
/// Gram eigenvalues below this fraction of the largest are floored.
pub const GRAM_EIGEN_FLOOR: f64 = 1e-14;

/// Dense trapezoid grid on the basis domain with the induced inner product
/// `M = W(g)ᵀ diag(w) W(g)` on coefficient vectors.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
    /// `Q x P` basis values on the grid.
    pub values: DMatrix<f64>,
    pub gram: DMatrix<f64>,
}

impl QuadratureGrid {
    pub fn new(tb: &TransformedBasis, n: usize) -> Result<Self> {
        let (a, b) = tb.domain();
        let grid = linspace(a, b, n);
        let weights = trapezoid_weights(&grid);
        let values = tb.eval(&grid, 0)?.values;
        let mut weighted = values.clone();
        for (mut row, w) in weighted.row_iter_mut().zip(&weights) {
            row *= *w;
        }
        let mut gram = values.transpose() * weighted;
        symmetrize(&mut gram);
        Ok(Self { grid, weights, values, gram })
    }

    /// `K x K` matrix of inner products `∫ φ_j φ_k` for coefficient columns.
    pub fn function_gram(&self, beta_phi: &DMatrix<f64>) -> DMatrix<f64> {
        let mut g = beta_phi.transpose() * &self.gram * beta_phi;
        symmetrize(&mut g);
        g
    }
}

/// Rotated components and scores, with the score second moments.
#[derive(Debug, Clone)]
pub struct Rotation {
    pub beta_phi: DMatrix<f64>,
    pub scores: DMatrix<f64>,
    /// Non-increasing diagonal of `ΞᵀΞ / I` after rotation.
    pub variances: DVector<f64>,
}

/// Rotates `(β_Φ, Ξ)` so that the components are orthonormal on `quad`,
/// ordered by decreasing score variance and signed so that each component's
/// largest-magnitude grid value is positive. `Ξ β_Φᵀ` is unchanged.
///
/// With `G = β_Φᵀ M β_Φ = E diag(g) Eᵀ` and `S = ΞᵀΞ / I`, the rotation
/// diagonalizes `diag(g)^{1/2} Eᵀ S E diag(g)^{1/2}`.
pub fn orthogonalize(
    beta_phi: &DMatrix<f64>,
    scores: &DMatrix<f64>,
    quad: &QuadratureGrid,
) -> Result<Rotation> {
    let k = beta_phi.ncols();
    if scores.ncols() != k {
        return Err(Error::DataValidation("scores and components disagree on K".into()));
    }
    if k == 0 {
        return Ok(Rotation {
            beta_phi: beta_phi.clone(),
            scores: scores.clone(),
            variances: DVector::zeros(0),
        });
    }
    let n = scores.nrows().max(1) as f64;
    let (g, e) = sym_eigen_desc(&quad.function_gram(beta_phi))?;
    let g_max = g[0];
    if !(g_max > 0.0) {
        return Ok(Rotation {
            beta_phi: beta_phi.clone(),
            scores: scores.clone(),
            variances: DVector::zeros(k),
        });
    }
    let floor = GRAM_EIGEN_FLOOR * g_max;
    let root = g.map(|v| v.max(floor).sqrt());
    let mut f = beta_phi * &e;
    let mut z = scores * &e;
    for j in 0..k {
        f.column_mut(j).scale_mut(1.0 / root[j]);
        z.column_mut(j).scale_mut(root[j]);
    }
    let mut s = z.transpose() * &z / n;
    symmetrize(&mut s);
    let (d, v) = sym_eigen_desc(&s)?;
    let mut beta_phi = f * &v;
    let mut scores = z * &v;
    let grid_values = &quad.values * &beta_phi;
    for j in 0..k {
        let col: Vec<f64> = grid_values.column(j).iter().copied().collect();
        if let Some(idx) = argmax_abs(&col) {
            if col[idx] < 0.0 {
                beta_phi.column_mut(j).neg_mut();
                scores.column_mut(j).neg_mut();
            }
        }
    }
    Ok(Rotation { beta_phi, scores, variances: d.map(|v| v.max(0.0)) })
}

/// Smallest `K'` whose cumulative share of `eigenvalues` reaches `pve`.
///
/// `pve >= 1` keeps every component; a zero total keeps one.
pub fn truncate_pve(eigenvalues: &[f64], pve: f64) -> usize {
    let k = eigenvalues.len();
    if k == 0 {
        return 0;
    }
    if pve >= 1.0 {
        return k;
    }
    let total: f64 = eigenvalues.iter().map(|v| v.max(0.0)).sum();
    if !(total > 0.0) {
        return 1;
    }
    let mut cum = 0.0;
    for (j, v) in eigenvalues.iter().enumerate() {
        cum += v.max(0.0);
        if cum / total >= pve {
            return j + 1;
        }
    }
    k
}
