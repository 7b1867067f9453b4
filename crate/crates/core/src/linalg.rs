//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Solves `h x = rhs` for a symmetric positive (semi)definite `h`.
///
/// Uses a Cholesky factorization. When that fails the system is retried with
/// an SVD pseudo-inverse, provided `h` is numerically full rank; genuinely
/// singular systems are reported as [`Error::RankDeficient`].
pub fn solve_spd(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let n = h.nrows();
    if let Some(chol) = h.clone().cholesky() {
        let x = chol.solve(rhs);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let svd = h.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let tol = max_sv * n as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if !(max_sv > 0.0) || rank < n {
        return Err(Error::RankDeficient(format!(
            "numerical rank {rank} of a {n}x{n} system"
        )));
    }
    log::warn!("Cholesky factorization failed; falling back to a pseudo-inverse solve");
    svd.solve(rhs, tol)
        .map_err(|e| Error::NumericalFailure(format!("pseudo-inverse solve failed: {e}")))
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// decreasing order and each eigenvector's largest-magnitude entry positive.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure(
            "non-finite entries in symmetric eigenproblem".into(),
        ));
    }
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 0).ok_or_else(|| {
        Error::NumericalFailure("symmetric eigendecomposition did not converge".into())
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        fix_sign(&mut col);
        vectors.set_column(dst, &col);
    }
    Ok((values, vectors))
}

/// Flips `v` so that its largest-magnitude entry is positive. Ties resolve to
/// the first such entry.
pub fn fix_sign(v: &mut DVector<f64>) {
    if let Some(idx) = argmax_abs(v.as_slice()) {
        if v[idx] < 0.0 {
            v.neg_mut();
        }
    }
}

pub(crate) fn argmax_abs(v: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, x) in v.iter().enumerate() {
        let a = x.abs();
        match best {
            Some((_, b)) if a <= b => {}
            _ => best = Some((i, a)),
        }
    }
    best.map(|b| b.0)
}

/// Symmetrizes in place: `m <- (m + m^T) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
