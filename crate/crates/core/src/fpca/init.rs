//! Starting values for the FPCA iteration.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::linalg::solve_spd;

use super::design::{update_coefficients, update_sigma2_fpca, Design};
use super::rotate::{orthogonalize, QuadratureGrid};
use super::FpcaState;

/// Singular values below this fraction of the largest are replaced by random
/// score columns.
const SINGULAR_REL_TOL: f64 = 1e-10;

/// Builds the initial state with `k` components.
///
/// On a common grid the scores are the leading left singular vectors of the
/// data centered by an unpenalized spline fit of the cross-sectional mean,
/// scaled by `√I`. Missing directions, and every direction on irregular
/// grids, are seeded standard-normal draws. Score columns are centered, the
/// coefficients are solved with `Λ = 0`, the components orthogonalized and
/// `σ²` set to the pooled mean squared residual.
pub fn initialize(design: &Design, quad: &QuadratureGrid, k: usize, seed: u64) -> Result<FpcaState> {
    let i = design.n_subjects();
    let p = design.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = DMatrix::zeros(i, k);
    let mut filled = 0;
    if k > 0 && design.is_common_grid() {
        if let Some(u) = svd_scores(design, k) {
            filled = u.ncols();
            for j in 0..filled {
                scores.set_column(j, &u.column(j));
            }
        }
    }
    if filled < k {
        log::debug!("drawing {} random initial score columns", k - filled);
    }
    for j in filled..k {
        for r in 0..i {
            scores[(r, j)] = StandardNormal.sample(&mut rng);
        }
    }
    for mut col in scores.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }

    let zero: Vec<DVector<f64>> = (0..=k).map(|_| DVector::zeros(p)).collect();
    let (beta_mu, beta_phi) = update_coefficients(design, &scores, &zero, 0.0)?;
    let rot = orthogonalize(&beta_phi, &scores, quad)?;
    let sigma2 = update_sigma2_fpca(design, &beta_mu, &rot.beta_phi, &rot.scores)?;
    Ok(FpcaState {
        beta_mu,
        beta_phi: rot.beta_phi,
        scores: rot.scores,
        lambda_mu: DVector::zeros(p),
        lambda_phi: vec![DVector::zeros(p); k],
        sigma2,
        variances: rot.variances,
    })
}

/// Leading `√I`-scaled left singular vectors of the mean-centered data, or
/// `None` when the mean fit or decomposition is unavailable. Only directions
/// with a non-negligible singular value are returned.
fn svd_scores(design: &Design, k: usize) -> Option<DMatrix<f64>> {
    let g = &design.groups[0];
    let i = g.members.len();
    let cross_mean = DVector::from_iterator(g.y.nrows(), g.y.row_iter().map(|r| r.mean()));
    let coef = solve_spd(&g.wtw, &(g.w.transpose() * &cross_mean)).ok()?;
    let mean_fit = &g.w * coef;
    let mut centered = g.y.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean_fit;
    }
    let svd = centered.transpose().svd(true, false);
    let u = svd.u?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let s_max = order.first().map(|&j| svd.singular_values[j])?;
    if !(s_max > 0.0) {
        return Some(DMatrix::zeros(i, 0));
    }
    let keep: Vec<usize> = order
        .into_iter()
        .take(k)
        .take_while(|&j| svd.singular_values[j] > SINGULAR_REL_TOL * s_max)
        .collect();
    let scale = (i as f64).sqrt();
    let mut out = DMatrix::zeros(i, keep.len());
    for (dst, &src) in keep.iter().enumerate() {
        out.set_column(dst, &(u.column(src) * scale));
    }
    Some(out)
}
