//! Finite-dimensional operator equations `F(u) = B(u) - f = 0`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, DsmError, Result};
use crate::linalg::{spectral_norm, Matrix, Vector};
use crate::sampling::{point_in_ball, rng_for, unit_vector};

/// The map `B` of an operator equation together with its derivative.
pub trait Operator: Send + Sync {
    fn dim(&self) -> usize;

    /// `B(u)`.
    fn apply(&self, u: &Vector) -> Vector;

    /// `B'(u)` as a dense matrix.
    fn jacobian(&self, u: &Vector) -> Matrix;

    /// The matrix of a linear operator, `None` for nonlinear ones.
    fn linear_matrix(&self) -> Option<&Matrix> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct LinearOperator {
    matrix: Matrix,
}

impl LinearOperator {
    pub fn new(matrix: Matrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(DsmError::Usage(format!(
                "operator matrix must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { matrix })
    }
}

impl Operator for LinearOperator {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, u: &Vector) -> Vector {
        &self.matrix * u
    }

    fn jacobian(&self, _u: &Vector) -> Matrix {
        self.matrix.clone()
    }

    fn linear_matrix(&self) -> Option<&Matrix> {
        Some(&self.matrix)
    }
}

type VecMap = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
type MatMap = Arc<dyn Fn(&Vector) -> Matrix + Send + Sync>;

/// A nonlinear operator given by closures.
#[derive(Clone)]
pub struct FnOperator {
    dim: usize,
    apply: VecMap,
    jacobian: MatMap,
}

impl FnOperator {
    pub fn new(
        dim: usize,
        apply: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
        jacobian: impl Fn(&Vector) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            apply: Arc::new(apply),
            jacobian: Arc::new(jacobian),
        }
    }

    /// Componentwise `u ↦ (φ(u_i))` with derivative `φ'`.
    pub fn componentwise(
        dim: usize,
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dphi: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let dphi = Arc::new(dphi);
        Self::new(
            dim,
            move |u| u.map(&phi),
            move |u| Matrix::from_diagonal(&u.map(|x| dphi(x))),
        )
    }
}

impl fmt::Debug for FnOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnOperator")
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl Operator for FnOperator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, u: &Vector) -> Vector {
        (self.apply)(u)
    }

    fn jacobian(&self, u: &Vector) -> Matrix {
        (self.jacobian)(u)
    }
}

/// Derivative bounds on the ball `B(u0, R)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    /// `sup ‖F'(u)‖`.
    pub m1: f64,
    /// `sup ‖F''(u)‖`.
    pub m2: f64,
    /// `sup ‖F'(u)⁻¹‖` for well-posed problems.
    pub inverse: Option<f64>,
    /// `inf` of the symmetric part of `F'(u)`, when known to be positive.
    pub coercivity: Option<f64>,
}

/// The sector excluded from the spectrum of `F'(u)`: points `r e^{iφ}` with
/// `0 < r < r0` and `|φ - π| < φ0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorSpec {
    pub phi0: f64,
    pub r0: f64,
}

impl SectorSpec {
    pub fn new(phi0: f64, r0: f64) -> Result<Self> {
        if !(phi0 > 0.0 && phi0 <= PI / 2.0) {
            return Err(DsmError::Usage(format!(
                "sector half-angle must lie in (0, pi/2], got {phi0}"
            )));
        }
        if !(r0 > 0.0) {
            return Err(DsmError::Usage(format!(
                "sector radius must be positive, got {r0}"
            )));
        }
        Ok(Self { phi0, r0 })
    }

    /// Largest shift for which the resolvent estimate is claimed.
    pub fn max_shift(&self) -> f64 {
        self.r0 * (1.0 - self.phi0.sin())
    }

    /// Whether `(re, im)` lies in the excluded sector.
    pub fn contains(&self, re: f64, im: f64) -> bool {
        let r = re.hypot(im);
        if !(r > 0.0 && r < self.r0) {
            return false;
        }
        // Angular distance from the negative real axis.
        let off_axis = im.atan2(-re).abs();
        off_axis < self.phi0
    }
}

/// An operator equation `F(u) = B(u) - f = 0` posed on `B(u0, R)`.
#[derive(Clone)]
pub struct OperatorProblem {
    pub name: String,
    pub op: Arc<dyn Operator>,
    pub rhs: Vector,
    pub u0: Vector,
    pub radius: f64,
    pub bounds: Bounds,
    pub y_known: Option<Vector>,
    pub monotone: bool,
    pub sector: Option<SectorSpec>,
    /// Construction diagnostics (condition numbers, source norms, ...).
    pub notes: BTreeMap<String, serde_json::Value>,
}

impl fmt::Debug for OperatorProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorProblem")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("radius", &self.radius)
            .field("bounds", &self.bounds)
            .field("monotone", &self.monotone)
            .field("sector", &self.sector)
            .finish_non_exhaustive()
    }
}

impl OperatorProblem {
    /// A problem with no derivative bounds, centered at `u0 = 0`.
    pub fn new(name: impl Into<String>, op: Arc<dyn Operator>, rhs: Vector) -> Result<Self> {
        let n = op.dim();
        check_dim(n, rhs.len())?;
        Ok(Self {
            name: name.into(),
            op,
            rhs,
            u0: Vector::zeros(n),
            radius: 1.0,
            bounds: Bounds {
                m1: 0.0,
                m2: 0.0,
                inverse: None,
                coercivity: None,
            },
            y_known: None,
            monotone: false,
            sector: None,
            notes: BTreeMap::new(),
        })
    }

    pub fn linear(name: impl Into<String>, a: Matrix, rhs: Vector) -> Result<Self> {
        let m1 = spectral_norm(&a);
        let mut p = Self::new(name, Arc::new(LinearOperator::new(a)?), rhs)?;
        p.bounds.m1 = m1;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn linear_matrix(&self) -> Option<&Matrix> {
        self.op.linear_matrix()
    }

    pub fn apply(&self, u: &Vector) -> Result<Vector> {
        check_dim(self.dim(), u.len())?;
        Ok(self.op.apply(u))
    }

    /// `F(u) = B(u) - f`.
    pub fn residual(&self, u: &Vector) -> Result<Vector> {
        Ok(self.apply(u)? - &self.rhs)
    }

    /// `A(u) = F'(u)`.
    pub fn jacobian(&self, u: &Vector) -> Result<Matrix> {
        check_dim(self.dim(), u.len())?;
        Ok(self.op.jacobian(u))
    }

    /// `A(u) v`.
    pub fn jacobian_apply(&self, u: &Vector, v: &Vector) -> Result<Vector> {
        check_dim(self.dim(), v.len())?;
        Ok(self.jacobian(u)? * v)
    }

    /// `A(u)ᵀ v`.
    pub fn adjoint_apply(&self, u: &Vector, v: &Vector) -> Result<Vector> {
        check_dim(self.dim(), v.len())?;
        Ok(self.jacobian(u)?.tr_mul(v))
    }

    pub fn in_ball(&self, u: &Vector) -> bool {
        (u - &self.u0).norm() <= self.radius
    }

    /// The same operator with data `f_delta`.
    pub fn with_rhs(&self, rhs: Vector) -> Result<Self> {
        check_dim(self.dim(), rhs.len())?;
        let mut p = self.clone();
        p.rhs = rhs;
        Ok(p)
    }
}

/// A problem together with perturbed data, `‖f_delta - f‖ ≤ delta`.
#[derive(Debug, Clone)]
pub struct NoisyProblem {
    pub base: OperatorProblem,
    pub f_delta: Vector,
    pub delta: f64,
}

impl NoisyProblem {
    pub fn new(base: OperatorProblem, f_delta: Vector, delta: f64) -> Result<Self> {
        check_dim(base.dim(), f_delta.len())?;
        if !(delta >= 0.0) {
            return Err(DsmError::Usage(format!(
                "noise level must be nonnegative, got {delta}"
            )));
        }
        let actual = (&f_delta - &base.rhs).norm();
        // Forming f + e and subtracting f again rounds at the scale of ‖f‖.
        let rounding = 4.0 * (base.dim() as f64).sqrt() * f64::EPSILON * (base.rhs.norm() + delta);
        if actual > delta * (1.0 + 1e-12) + rounding + f64::MIN_POSITIVE {
            return Err(DsmError::Usage(format!(
                "perturbation norm {actual:e} exceeds the stated noise level {delta:e}"
            )));
        }
        Ok(Self {
            base,
            f_delta,
            delta,
        })
    }

    /// The problem posed with the noisy data.
    pub fn problem(&self) -> OperatorProblem {
        let mut p = self.base.clone();
        p.rhs = self.f_delta.clone();
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub monotone: bool,
    /// Smallest observed `(F(u) - F(v), u - v)`.
    pub worst_value: f64,
    pub worst_pair: Option<(Vec<f64>, Vec<f64>)>,
    pub samples: usize,
    pub seed: u64,
}

/// Samples pairs in `B(u0, R)` and tests `(F(u) - F(v), u - v) ≥ -1e-12`.
pub fn monotonicity_probe(p: &OperatorProblem, samples: usize, seed: u64) -> MonotonicityReport {
    monotonicity_probe_in(p, &p.u0, p.radius, samples, seed)
}

/// [`monotonicity_probe`] on an arbitrary ball.
///
/// Half of the pairs are uniform in the ball; the other half are short
/// segments along the eigenvector of the smallest eigenvalue of the
/// symmetric part of `A(u)`, which finds local non-monotonicity that uniform
/// pairs miss in higher dimensions.
pub fn monotonicity_probe_in(
    p: &OperatorProblem,
    center: &Vector,
    radius: f64,
    samples: usize,
    seed: u64,
) -> MonotonicityReport {
    let mut rng = rng_for(seed, 0x6d6f6e6f);
    let mut worst_value = f64::INFINITY;
    let mut worst_pair = None;
    let mut record = |u: &Vector, v: &Vector| {
        let value = (p.op.apply(u) - p.op.apply(v)).dot(&(u - v));
        if value < worst_value {
            worst_value = value;
            worst_pair = Some((u.iter().copied().collect(), v.iter().copied().collect()));
        }
    };
    for k in 0..samples.max(1) {
        let u = point_in_ball(&mut rng, center, radius);
        if k % 2 == 0 {
            let v = point_in_ball(&mut rng, center, radius);
            record(&u, &v);
        } else {
            let a = p.op.jacobian(&u);
            let sym = (&a + a.transpose()) * 0.5;
            let eig = sym.symmetric_eigen();
            let idx = eig.eigenvalues.imin();
            let dir = eig.eigenvectors.column(idx).into_owned();
            let step = 1e-3 * radius.max(1e-12);
            record(&(&u + &dir * step), &(&u - &dir * step));
        }
    }
    MonotonicityReport {
        monotone: worst_value >= -1e-12,
        worst_value,
        worst_pair,
        samples,
        seed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SectorReport {
    pub passed: bool,
    /// No sampled eigenvalue inside the excluded sector.
    pub spectrum_ok: bool,
    /// Resolvent estimate held at every spot-check.
    pub resolvent_ok: bool,
    pub worst_point: Option<Vec<f64>>,
    pub samples: usize,
    pub seed: u64,
}

/// Samples `u` in `B(u0, R)` and checks the spectrum of `A(u)` against the
/// sector, then spot-checks `‖(A(u) + ε)⁻¹‖ ≤ 1/(ε sin φ0)` for shifts below
/// `r0 (1 - sin φ0)`.
pub fn sector_probe(
    p: &OperatorProblem,
    s: &SectorSpec,
    samples: usize,
    seed: u64,
) -> Result<SectorReport> {
    sector_probe_in(p, s, &p.u0, p.radius, samples, seed)
}

pub fn sector_probe_in(
    p: &OperatorProblem,
    s: &SectorSpec,
    center: &Vector,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<SectorReport> {
    let mut rng = rng_for(seed, 0x73656374);
    let n = p.dim();
    let shifts: Vec<f64> = [0.9, 0.5, 0.1, 0.01]
        .iter()
        .map(|f| f * s.max_shift())
        .collect();
    let mut spectrum_ok = true;
    let mut resolvent_ok = true;
    let mut worst_point = None;
    for k in 0..samples.max(1) {
        let u = if k == 0 {
            center.clone()
        } else {
            point_in_ball(&mut rng, center, radius)
        };
        let a = p.op.jacobian(&u);
        if a.iter().any(|x| !x.is_finite()) {
            return Err(DsmError::Numeric(
                "non-finite Jacobian in sector probe".into(),
            ));
        }
        let eigs = a.complex_eigenvalues();
        if eigs.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(DsmError::Numeric("eigenvalue computation failed".into()));
        }
        let inside = eigs.iter().any(|z| s.contains(z.re, z.im));
        let mut bad = inside;
        if inside {
            spectrum_ok = false;
        } else {
            for &eps in &shifts {
                let mut shifted = a.clone();
                for i in 0..n {
                    shifted[(i, i)] += eps;
                }
                let smin = crate::linalg::singular_values(&shifted)
                    .last()
                    .copied()
                    .unwrap_or(0.0);
                let bound = 1.0 / (eps * s.phi0.sin());
                if !(smin > 0.0) || 1.0 / smin > bound * (1.0 + 1e-10) {
                    resolvent_ok = false;
                    bad = true;
                }
            }
        }
        if bad && worst_point.is_none() {
            worst_point = Some(u.iter().copied().collect());
        }
    }
    Ok(SectorReport {
        passed: spectrum_ok && resolvent_ok,
        spectrum_ok,
        resolvent_ok,
        worst_point,
        samples,
        seed,
    })
}

/// Sampled estimates of the derivative bounds on `B(u0, R)`. They carry no
/// guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantEstimates {
    pub m1: f64,
    pub m2: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Sampled suprema of `‖A(u)‖` and of symmetric second differences
/// `‖F(u+hv) - 2F(u) + F(u-hv)‖/h²` over unit `v`, `h = eps^{1/3}(1+‖u‖)`.
pub fn estimate_constants(
    p: &OperatorProblem,
    samples: usize,
    seed: u64,
) -> Result<ConstantEstimates> {
    if samples < 2 {
        return Err(DsmError::Usage(
            "estimate_constants needs at least 2 samples".into(),
        ));
    }
    let mut rng = rng_for(seed, 0x636f6e73);
    let n = p.dim();
    let mut m1 = 0.0_f64;
    let mut m2 = 0.0_f64;
    for k in 0..samples {
        let u = if k == 0 {
            p.u0.clone()
        } else {
            point_in_ball(&mut rng, &p.u0, p.radius)
        };
        m1 = m1.max(spectral_norm(&p.op.jacobian(&u)));
        let v = unit_vector(&mut rng, n);
        let h = f64::EPSILON.cbrt() * (1.0 + u.norm());
        let fu = p.op.apply(&u);
        let second = (p.op.apply(&(&u + &v * h)) - fu * 2.0 + p.op.apply(&(&u - &v * h))) / (h * h);
        m2 = m2.max(second.norm());
    }
    // Second differences of an affine map are pure rounding noise.
    if p.linear_matrix().is_some() {
        m2 = 0.0;
    }
    Ok(ConstantEstimates {
        m1,
        m2,
        samples,
        seed,
    })
}

/// `‖(F(u+hv) - F(u))/h - A(u)v‖` for each `h`.
pub fn fd_jacobian_errors(
    p: &OperatorProblem,
    u: &Vector,
    v: &Vector,
    hs: &[f64],
) -> Result<Vec<f64>> {
    let fu = p.apply(u)?;
    let av = p.jacobian_apply(u, v)?;
    hs.iter()
        .map(|&h| Ok(((p.apply(&(u + v * h))? - &fu) / h - &av).norm()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cube(n: usize, f: Vec<f64>) -> OperatorProblem {
        let op = FnOperator::componentwise(n, |x| x * x * x, |x| 3.0 * x * x);
        OperatorProblem::new("cube", Arc::new(op), Vector::from_vec(f)).unwrap()
    }

    fn scalar_linear(a: f64) -> OperatorProblem {
        OperatorProblem::linear("lin", Matrix::from_element(1, 1, a), Vector::zeros(1)).unwrap()
    }

    #[test]
    fn residual_examples() {
        let p = OperatorProblem::linear(
            "id",
            Matrix::identity(2, 2),
            Vector::from_vec(vec![1.0, 1.0]),
        )
        .unwrap();
        assert_eq!(
            p.residual(&Vector::zeros(2)).unwrap(),
            Vector::from_vec(vec![-1.0, -1.0])
        );
        assert_eq!(
            p.residual(&Vector::from_vec(vec![1.0, 1.0])).unwrap(),
            Vector::zeros(2)
        );
        let c = cube(1, vec![8.0]);
        assert_eq!(c.residual(&Vector::from_element(1, 2.0)).unwrap()[0], 0.0);
    }

    #[test]
    fn residual_dimension_mismatch() {
        let c = cube(2, vec![0.0, 0.0]);
        let err = c.residual(&Vector::zeros(3)).unwrap_err();
        assert_eq!(
            err,
            DsmError::DimensionMismatch {
                expected: 2,
                found: 3
            }
        );
    }

    #[test]
    fn jacobian_apply_examples() {
        let c = cube(1, vec![0.0]);
        let one = Vector::from_element(1, 1.0);
        assert_eq!(c.jacobian_apply(&one, &one).unwrap()[0], 3.0);
        let two = Vector::from_element(1, 2.0);
        assert_eq!(
            c.jacobian_apply(&two, &Vector::from_element(1, 0.5))
                .unwrap()[0],
            6.0
        );
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let p = OperatorProblem::linear("a", a.clone(), Vector::zeros(2)).unwrap();
        let v = Vector::from_vec(vec![0.5, -1.0]);
        assert_eq!(p.jacobian_apply(&Vector::zeros(2), &v).unwrap(), &a * &v);
    }

    #[test]
    fn adjoint_examples() {
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let p = OperatorProblem::linear("a", a, Vector::zeros(2)).unwrap();
        let r = p
            .adjoint_apply(&Vector::zeros(2), &Vector::from_vec(vec![1.0, 0.0]))
            .unwrap();
        assert_eq!(r, Vector::from_vec(vec![0.0, 1.0]));
        let s = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let p = OperatorProblem::linear("s", s.clone(), Vector::zeros(2)).unwrap();
        let v = Vector::from_vec(vec![1.0, -2.0]);
        assert_eq!(p.adjoint_apply(&Vector::zeros(2), &v).unwrap(), &s * &v);
    }

    #[test]
    fn monotonicity_examples() {
        assert!(monotonicity_probe(&cube(3, vec![0.0; 3]), 200, 1).monotone);
        assert!(!monotonicity_probe(&scalar_linear(-1.0), 50, 1).monotone);
        let spd = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let p = OperatorProblem::linear("spd", spd, Vector::zeros(2)).unwrap();
        let report = monotonicity_probe(&p, 200, 2);
        assert!(report.monotone);
        assert_eq!(report.samples, 200);
    }

    #[test]
    fn sector_examples() {
        let s = SectorSpec::new(PI / 4.0, 0.5).unwrap();
        let id = OperatorProblem::linear("i", Matrix::identity(2, 2), Vector::zeros(2)).unwrap();
        assert!(sector_probe(&id, &s, 10, 0).unwrap().passed);
        let small =
            OperatorProblem::linear("s", Matrix::identity(2, 2) * -0.1, Vector::zeros(2)).unwrap();
        let r = sector_probe(&small, &s, 10, 0).unwrap();
        assert!(!r.passed && !r.spectrum_ok);
        let neg = OperatorProblem::linear("n", -Matrix::identity(2, 2), Vector::zeros(2)).unwrap();
        assert!(sector_probe(&neg, &s, 10, 0).unwrap().passed);
    }

    #[test]
    fn sector_spec_validation() {
        assert!(SectorSpec::new(0.0, 1.0).is_err());
        assert!(SectorSpec::new(0.3, 0.0).is_err());
        assert!(SectorSpec::new(PI / 2.0, 1.0).is_ok());
    }

    #[test]
    fn estimate_constants_examples() {
        let lin = scalar_linear(3.0);
        let e = estimate_constants(&lin, 20, 0).unwrap();
        assert_relative_eq!(e.m1, 3.0, epsilon = 1e-12);
        assert_eq!(e.m2, 0.0);

        let op = FnOperator::componentwise(1, |x| x * x, |x| 2.0 * x);
        let sq = OperatorProblem::new("sq", Arc::new(op), Vector::zeros(1)).unwrap();
        let e = estimate_constants(&sq, 2000, 3).unwrap();
        assert!((e.m1 - 2.0).abs() < 0.02, "m1 = {}", e.m1);
        assert!((e.m2 - 2.0).abs() < 1e-3, "m2 = {}", e.m2);

        let op = FnOperator::new(
            2,
            |_| Vector::from_vec(vec![1.0, 2.0]),
            |_| Matrix::zeros(2, 2),
        );
        let c = OperatorProblem::new("c", Arc::new(op), Vector::zeros(2)).unwrap();
        let e = estimate_constants(&c, 5, 0).unwrap();
        assert_eq!((e.m1, e.m2), (0.0, 0.0));
    }

    #[test]
    fn noisy_problem_rejects_excess_noise() {
        let p = scalar_linear(1.0);
        assert!(NoisyProblem::new(p.clone(), Vector::from_element(1, 0.1), 0.05).is_err());
        let np = NoisyProblem::new(p, Vector::from_element(1, 0.1), 0.1).unwrap();
        assert_eq!(np.problem().rhs[0], 0.1);
    }
}
