//! Clamped cubic B-spline bases, the second-derivative penalty matrix and
//! the eigen-transformed basis `W(t) = S(t) U`.
//!
//! Under `W` the roughness penalty `∫ f''(t)² dt` becomes
//! `β^T blockdiag(0₂ₓ₂, I) β`: the first two columns span the affine
//! functions (intercept, centered slope) and are unpenalized, and every other
//! column carries unit penalty. A diagonal tuning matrix on `β` is then an
//! adaptive ridge penalty.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, sym_eigen_desc};
use crate::quadrature::GAUSS_LEGENDRE_3;

/// Polynomial degree of every basis built here.
pub const DEGREE: usize = 3;
/// Number of unpenalized columns of the transformed basis.
pub const NULL_DIM: usize = 2;
/// Smallest supported basis dimension.
pub const MIN_DIM: usize = 6;
/// Relative eigenvalue threshold separating the penalty null space.
pub const NULL_EIGEN_REL_TOL: f64 = 1e-8;
/// Denominator magnitude below which `λ(t)` is reported as undefined.
pub const PENALTY_FN_DENOM_TOL: f64 = 1e-12;

/// Clamped cubic knot sequence on `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    lower: f64,
    upper: f64,
    interior: Vec<f64>,
    knots: Vec<f64>,
}

impl KnotVector {
    /// Builds a knot vector from explicit interior knots, which must be
    /// strictly increasing and lie strictly inside `(lower, upper)`.
    pub fn new(lower: f64, upper: f64, interior: Vec<f64>) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite()) || lower >= upper {
            return Err(Error::InvalidDomain(format!(
                "need finite lower < upper, got [{lower}, {upper}]"
            )));
        }
        let dim = interior.len() + DEGREE + 1;
        if dim < MIN_DIM {
            return Err(Error::InvalidDimension(format!(
                "basis dimension {dim} is below the minimum of {MIN_DIM}"
            )));
        }
        let mut prev = lower;
        for &k in &interior {
            if !(k > prev && k < upper) {
                return Err(Error::InvalidDomain(format!(
                    "interior knots must be strictly increasing inside ({lower}, {upper})"
                )));
            }
            prev = k;
        }
        let mut knots = Vec::with_capacity(dim + DEGREE + 1);
        knots.extend(std::iter::repeat_n(lower, DEGREE + 1));
        knots.extend_from_slice(&interior);
        knots.extend(std::iter::repeat_n(upper, DEGREE + 1));
        Ok(Self { lower, upper, interior, knots })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    /// The full clamped knot sequence (boundary knots repeated four times).
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of B-spline functions, `P`.
    pub fn dim(&self) -> usize {
        self.interior.len() + DEGREE + 1
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.lower && t <= self.upper
    }

    /// Greville abscissae; a cubic spline with these coefficients reproduces
    /// the identity function `t`.
    pub fn greville(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|p| self.knots[p + 1..=p + DEGREE].iter().sum::<f64>() / DEGREE as f64)
            .collect()
    }

    /// Index `s` of the knot span with `knots[s] <= t < knots[s + 1]`; the
    /// right endpoint belongs to the last non-empty span.
    fn find_span(&self, t: f64) -> usize {
        let n = self.dim() - 1;
        if t >= self.knots[n + 1] {
            return n;
        }
        let (mut low, mut high) = (DEGREE, n + 1);
        let mut mid = (low + high) / 2;
        while t < self.knots[mid] || t >= self.knots[mid + 1] {
            if t < self.knots[mid] {
                high = mid;
            } else {
                low = mid;
            }
            mid = (low + high) / 2;
        }
        mid
    }

    /// Nonzero basis functions and their derivatives up to `n_deriv` at `t`,
    /// following the standard de Boor triangular scheme.
    /// Returns the span index and `ders[k][j]` = k-th derivative of
    /// `B_{span-3+j}(t)`.
    fn basis_derivatives(&self, t: f64, n_deriv: usize) -> (usize, Vec<[f64; DEGREE + 1]>) {
        let p = DEGREE;
        let span = self.find_span(t);
        let u = &self.knots;
        let mut ndu = [[0.0f64; DEGREE + 1]; DEGREE + 1];
        let mut left = [0.0f64; DEGREE + 1];
        let mut right = [0.0f64; DEGREE + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[span + 1 - j];
            right[j] = u[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![[0.0f64; DEGREE + 1]; n_deriv + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = [[0.0f64; DEGREE + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0] = [0.0; DEGREE + 1];
            a[1] = [0.0; DEGREE + 1];
            a[0][0] = 1.0;
            for k in 1..=n_deriv.min(p) {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=n_deriv.min(p) {
            for v in ders[k].iter_mut() {
                *v *= factor;
            }
            factor *= (p - k) as f64;
        }
        (span, ders)
    }
}

/// `P - 4` equally spaced interior knots on `(lower, upper)` with clamped ends.
pub fn make_knots(domain: (f64, f64), dim: usize) -> Result<KnotVector> {
    let (a, b) = domain;
    if dim < MIN_DIM {
        return Err(Error::InvalidDimension(format!(
            "basis dimension {dim} is below the minimum of {MIN_DIM}"
        )));
    }
    if !(a.is_finite() && b.is_finite()) || a >= b {
        return Err(Error::InvalidDomain(format!("need finite a < b, got [{a}, {b}]")));
    }
    let n_interior = dim - DEGREE - 1;
    let step = (b - a) / (n_interior + 1) as f64;
    let interior = (1..=n_interior).map(|k| a + k as f64 * step).collect();
    KnotVector::new(a, b, interior)
}

/// Evaluations of a basis (or one of its derivatives) on a set of abscissae.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    /// `J x P` matrix of evaluations.
    pub values: DMatrix<f64>,
    pub deriv_order: usize,
    pub grid: Vec<f64>,
}

impl BasisMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

/// B-spline basis matrix `S(t)` or its `deriv`-th derivative (0, 1 or 2).
pub fn eval_basis(knots: &KnotVector, t: &[f64], deriv: usize) -> Result<BasisMatrix> {
    if deriv > 2 {
        return Err(Error::InvalidConfig(format!(
            "derivative order {deriv} not supported (0, 1 or 2)"
        )));
    }
    let dim = knots.dim();
    let mut values = DMatrix::zeros(t.len(), dim);
    for (row, &x) in t.iter().enumerate() {
        if !x.is_finite() || !knots.contains(x) {
            return Err(Error::OutOfDomain { value: x, lower: knots.lower, upper: knots.upper });
        }
        let (span, ders) = knots.basis_derivatives(x, deriv);
        for (j, v) in ders[deriv].iter().enumerate() {
            values[(row, span - DEGREE + j)] = *v;
        }
    }
    Ok(BasisMatrix { values, deriv_order: deriv, grid: t.to_vec() })
}

/// Gram matrix of B-spline second derivatives, `Ω_pq = ∫ s_p'' s_q''`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    pub omega: DMatrix<f64>,
}

impl PenaltyMatrix {
    pub fn dim(&self) -> usize {
        self.omega.nrows()
    }

    /// Eigenvalues in decreasing order.
    pub fn eigenvalues(&self) -> Result<DVector<f64>> {
        Ok(sym_eigen_desc(&self.omega)?.0)
    }

    /// Number of eigenvalues below `NULL_EIGEN_REL_TOL` times the largest.
    pub fn null_count(&self) -> Result<usize> {
        let ev = self.eigenvalues()?;
        let cut = NULL_EIGEN_REL_TOL * ev[0];
        Ok(ev.iter().filter(|&&v| v < cut).count())
    }
}

/// Exact penalty matrix by three-point Gauss–Legendre quadrature on every
/// inter-knot interval (the integrand is piecewise quadratic).
pub fn penalty_matrix(knots: &KnotVector) -> PenaltyMatrix {
    let dim = knots.dim();
    let mut omega = DMatrix::zeros(dim, dim);
    let k = knots.knots();
    for span in DEGREE..dim {
        let (lo, hi) = (k[span], k[span + 1]);
        if hi <= lo {
            continue;
        }
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        for &(x, w) in &GAUSS_LEGENDRE_3 {
            let t = mid + half * x;
            let (s, ders) = knots.basis_derivatives(t, 2);
            debug_assert_eq!(s, span);
            let d2 = &ders[2];
            for i in 0..=DEGREE {
                for j in 0..=DEGREE {
                    omega[(span - DEGREE + i, span - DEGREE + j)] += half * w * d2[i] * d2[j];
                }
            }
        }
    }
    linalg::symmetrize(&mut omega);
    PenaltyMatrix { omega }
}

/// Basis `W(t) = S(t) U` with `U = [Q₁ | Q₂ Ψ₂^{-1/2}]`.
///
/// Columns 0 and 1 are the constant and centered-linear functions; the
/// remaining columns are ordered by decreasing penalty eigenvalue of `Ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedBasis {
    pub knots: KnotVector,
    /// `P x P` transformation from B-spline to transformed coefficients.
    pub u: DMatrix<f64>,
    pub null_dim: usize,
    /// Positive eigenvalues of `Ω` in the order of the penalized columns.
    pub penalized_eigenvalues: Vec<f64>,
}

impl TransformedBasis {
    pub fn dim(&self) -> usize {
        self.u.ncols()
    }

    pub fn domain(&self) -> (f64, f64) {
        self.knots.domain()
    }

    /// `W(t)` or one of its derivatives.
    pub fn eval(&self, t: &[f64], deriv: usize) -> Result<BasisMatrix> {
        let s = eval_basis(&self.knots, t, deriv)?;
        Ok(BasisMatrix { values: s.values * &self.u, deriv_order: deriv, grid: s.grid })
    }

    /// Function values `W(t) β` for a coefficient vector.
    pub fn eval_function(&self, t: &[f64], beta: &DVector<f64>) -> Result<Vec<f64>> {
        let w = self.eval(t, 0)?;
        Ok((w.values * beta).iter().copied().collect())
    }
}

/// Eigen-transformation of the cubic B-spline basis on `knots`.
pub fn wand_transform(knots: &KnotVector) -> Result<TransformedBasis> {
    let dim = knots.dim();
    let penalty = penalty_matrix(knots);
    let (values, vectors) = sym_eigen_desc(&penalty.omega)?;
    let cut = NULL_EIGEN_REL_TOL * values[0];
    let n_null = values.iter().filter(|&&v| v < cut).count();
    if n_null != NULL_DIM {
        return Err(Error::NumericalFailure(format!(
            "penalty matrix has {n_null} null eigenvalues, expected {NULL_DIM}"
        )));
    }
    let n_pen = dim - NULL_DIM;
    let mut u = DMatrix::zeros(dim, dim);

    // Null space of Ω is the affine functions. Express it exactly as the
    // orthonormal pair {constant, centered slope} in B-spline coefficients.
    let ones = DVector::from_element(dim, 1.0 / (dim as f64).sqrt());
    let centre = 0.5 * (knots.lower() + knots.upper());
    let mut slope = DVector::from_iterator(dim, knots.greville().into_iter().map(|g| g - centre));
    let proj = ones.dot(&slope);
    slope.axpy(-proj, &ones, 1.0);
    let norm = slope.norm();
    if !(norm > 0.0) {
        return Err(Error::NumericalFailure("degenerate slope direction".into()));
    }
    slope /= norm;
    u.set_column(0, &ones);
    u.set_column(1, &slope);

    let mut penalized_eigenvalues = Vec::with_capacity(n_pen);
    for k in 0..n_pen {
        let ev = values[k];
        if !(ev > 0.0) {
            return Err(Error::NumericalFailure(format!("non-positive penalty eigenvalue {ev}")));
        }
        let col = vectors.column(k) / ev.sqrt();
        u.set_column(NULL_DIM + k, &col);
        penalized_eigenvalues.push(ev);
    }
    Ok(TransformedBasis { knots: knots.clone(), u, null_dim: NULL_DIM, penalized_eigenvalues })
}

/// Pointwise penalty function
/// `λ(t) = (Σ_p λ_p β_p w_p''(t) / Σ_p β_p w_p''(t))²`.
///
/// `tuning` holds the (signed) `λ_p`, not their squares. Points where the
/// denominator vanishes (`|f''(t)| < 1e-12`) are returned as `None`.
pub fn penalty_fn_values(
    tb: &TransformedBasis,
    beta: &DVector<f64>,
    tuning: &DVector<f64>,
    grid: &[f64],
) -> Result<Vec<Option<f64>>> {
    let dim = tb.dim();
    if beta.len() != dim || tuning.len() != dim {
        return Err(Error::DataValidation(format!(
            "coefficient and tuning vectors must have length {dim}"
        )));
    }
    let w2 = tb.eval(grid, 2)?;
    let mut out = Vec::with_capacity(grid.len());
    for row in 0..grid.len() {
        let mut num = 0.0;
        let mut den = 0.0;
        for p in tb.null_dim..dim {
            let term = beta[p] * w2.values[(row, p)];
            num += tuning[p] * term;
            den += term;
        }
        if den.abs() < PENALTY_FN_DENOM_TOL {
            out.push(None);
        } else {
            let r = num / den;
            out.push(Some(r * r));
        }
    }
    Ok(out)
}
