//! Dense linear-algebra substrate: shifted solves, pivoted LU with a
//! singularity gate, SVD-based minimal-norm solutions and spectral norms.
//!
//! SVDs use one-sided Jacobi rather than nalgebra's bidiagonal SVD, which
//! returns inaccurate factors on some rank-deficient inputs with exact zeros.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, DsmError, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Rank decision threshold: singular values at or below this are treated as zero.
pub fn rank_cutoff(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * sigma_max * f64::EPSILON * 10.0
}

/// Relative residual above which a right-hand side is declared outside the range.
pub const RANGE_TOLERANCE: f64 = 1e-10;

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    Svd::new(m).sigma.max()
}

/// Thin SVD `A = W Vᵀ` with `W = U Σ` from one-sided Jacobi rotations.
///
/// `v` is a full n×n orthogonal matrix; column k of `w` has norm `sigma[k]`.
/// Singular values are not sorted.
pub struct Svd {
    pub w: Matrix,
    pub sigma: Vector,
    pub v: Matrix,
}

const JACOBI_MAX_SWEEPS: usize = 80;

impl Svd {
    pub fn new(a: &Matrix) -> Self {
        let (m, n) = a.shape();
        let mut w = a.clone();
        let mut v = Matrix::identity(n, n);
        for _ in 0..JACOBI_MAX_SWEEPS {
            let mut rotated = false;
            for i in 0..n {
                for j in i + 1..n {
                    let alpha = w.column(i).norm_squared();
                    let beta = w.column(j).norm_squared();
                    let gamma = w.column(i).dot(&w.column(j));
                    if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for k in 0..m {
                        let (x, y) = (w[(k, i)], w[(k, j)]);
                        w[(k, i)] = c * x - s * y;
                        w[(k, j)] = s * x + c * y;
                    }
                    for k in 0..n {
                        let (x, y) = (v[(k, i)], v[(k, j)]);
                        v[(k, i)] = c * x - s * y;
                        v[(k, j)] = s * x + c * y;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
        let sigma = Vector::from_iterator(n, (0..n).map(|k| w.column(k).norm()));
        Self { w, sigma, v }
    }

    fn cutoff(&self) -> f64 {
        rank_cutoff(self.w.nrows(), self.w.ncols(), self.sigma.max())
    }
}

/// Singular values in decreasing order.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = Svd::new(a).sigma.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s.truncate(a.nrows().min(a.ncols()));
    s
}

/// Solves `(m + eps I) x = b` for symmetric positive semidefinite `m`.
///
/// Uses a Cholesky factorization followed by one step of iterative
/// refinement.
pub fn shifted_solve(m: &Matrix, eps: f64, b: &Vector) -> Result<Vector> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(DsmError::Usage(format!(
            "shift must be positive, got {eps}"
        )));
    }
    if !m.is_square() {
        return Err(DsmError::Usage(
            "shifted_solve needs a square matrix".into(),
        ));
    }
    check_dim(m.nrows(), b.len())?;

    let mut shifted = m.clone();
    for i in 0..shifted.nrows() {
        shifted[(i, i)] += eps;
    }
    let chol = shifted.clone().cholesky().ok_or_else(|| {
        DsmError::SolverFailure(format!(
            "M + {eps:e} I is not numerically positive definite"
        ))
    })?;
    let mut x = chol.solve(b);
    let r = b - &shifted * &x;
    x += chol.solve(&r);
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(DsmError::SolverFailure(
            "shifted solve produced non-finite values".into(),
        ))
    }
}

/// Solves `a x = b` by LU with partial pivoting.
///
/// A pivot at or below `n * eps * max|a_ij|` is reported as singular.
pub fn lu_solve(a: &Matrix, b: &Vector) -> Result<Vector> {
    if !a.is_square() {
        return Err(DsmError::Usage("lu_solve needs a square matrix".into()));
    }
    check_dim(a.nrows(), b.len())?;
    let n = a.nrows();
    let scale = a.amax();
    let lu = a.clone().lu();
    let u = lu.u();
    let threshold = n as f64 * f64::EPSILON * scale;
    let min_pivot = (0..n)
        .map(|i| u[(i, i)].abs())
        .fold(f64::INFINITY, f64::min);
    if !(min_pivot > threshold) {
        return Err(DsmError::SolverFailure(format!(
            "matrix is numerically singular (smallest pivot {min_pivot:e})"
        )));
    }
    let x = lu
        .solve(b)
        .ok_or_else(|| DsmError::SolverFailure("LU solve failed".into()))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(DsmError::SolverFailure(
            "LU solve produced non-finite values".into(),
        ))
    }
}

/// A reusable LU factorization (used where a method allows caching).
#[derive(Debug, Clone)]
pub struct LuFactor {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    n: usize,
}

impl LuFactor {
    pub fn new(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(DsmError::Usage(
                "LU factorization needs a square matrix".into(),
            ));
        }
        let n = a.nrows();
        let scale = a.amax();
        let lu = a.clone().lu();
        let u = lu.u();
        let min_pivot = (0..n)
            .map(|i| u[(i, i)].abs())
            .fold(f64::INFINITY, f64::min);
        if !(min_pivot > n as f64 * f64::EPSILON * scale) {
            return Err(DsmError::SolverFailure(format!(
                "matrix is numerically singular (smallest pivot {min_pivot:e})"
            )));
        }
        Ok(Self { lu, n })
    }

    pub fn solve(&self, b: &Vector) -> Result<Vector> {
        check_dim(self.n, b.len())?;
        self.lu
            .solve(b)
            .ok_or_else(|| DsmError::SolverFailure("LU solve failed".into()))
    }
}

/// Least-squares minimal-norm solution `A⁺ f`, truncating singular values
/// at [`rank_cutoff`]. No consistency check.
pub fn pseudo_inverse_solve(a: &Matrix, f: &Vector) -> Result<Vector> {
    check_dim(a.nrows(), f.len())?;
    if a.is_empty() {
        return Ok(Vector::zeros(a.ncols()));
    }
    let svd = Svd::new(a);
    let cut = svd.cutoff();
    let mut x = Vector::zeros(a.ncols());
    for (k, &s) in svd.sigma.iter().enumerate() {
        if s > cut {
            let coeff = svd.w.column(k).dot(f) / (s * s);
            x += svd.v.column(k) * coeff;
        }
    }
    Ok(x)
}

/// The minimal-norm solution of `A x = f`, i.e. the solution orthogonal to
/// the null space of `A`.
///
/// Fails with [`DsmError::Inconsistent`] when `f` has a component outside
/// the numerical range larger than `RANGE_TOLERANCE (‖A‖‖x‖ + ‖f‖)`.
pub fn minimal_norm_solution(a: &Matrix, f: &Vector) -> Result<Vector> {
    let x = pseudo_inverse_solve(a, f)?;
    let residual = (a * &x - f).norm();
    let scale = spectral_norm(a) * x.norm() + f.norm();
    if residual > RANGE_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
        return Err(DsmError::Inconsistent { residual });
    }
    Ok(x)
}

/// Orthonormal basis of the numerical null space of `a`.
pub fn null_space_basis(a: &Matrix) -> Vec<Vector> {
    let svd = Svd::new(a);
    let cut = svd.cutoff();
    svd.sigma
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= cut)
        .map(|(k, _)| svd.v.column(k).into_owned())
        .collect()
}

/// Spectral condition number (infinite for numerically singular input).
pub fn condition_number(a: &Matrix) -> f64 {
    let s = singular_values(a);
    match (s.first(), s.last()) {
        (Some(&max), Some(&min)) if min > 0.0 => max / min,
        _ => f64::INFINITY,
    }
}

/// Smallest eigenvalue of the symmetric part of `a`.
pub fn min_symmetric_eigenvalue(a: &Matrix) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}
