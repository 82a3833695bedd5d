//! Right-hand sides `Φ(t, u)` of the flows `u̇ = Φ(t, u)`.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, DsmError, Result};
use crate::linalg::{lu_solve, shifted_solve, spectral_norm, LuFactor, Matrix, Vector};
use crate::operator::{NoisyProblem, OperatorProblem};
use crate::schedule::EpsilonSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// `-A⁻¹F`.
    Newton,
    /// `-F`.
    Simple,
    /// `-AᵀF`.
    Gradient,
    /// `-(AᵀA)⁻¹AᵀF`.
    GaussNewton,
    /// `-A(u0)⁻¹F(u)`.
    ModifiedNewton,
    /// `-(f/‖f'‖²) f'` with `f = ‖F‖²`.
    Descent,
    /// `-(Bu + εu - q)`, `B = AᵀA`, `q = Aᵀf`.
    LinearPlain,
    /// `-u + (B + ε)⁻¹q`.
    LinearPrecond,
    /// `-(A + ε)⁻¹[F + ε(u - ũ0)]`.
    MonotoneRegNewton,
    /// `-F - ε(u - ũ0)`.
    MonotoneSimple,
    /// `-(AᵀA + ε)⁻¹[AᵀF + ε(u - ũ0)]`.
    NonmonotoneSource,
    /// `u̇ = -QF`, `Q̇ = -AᵀAQ + Aᵀ`.
    CoupledInversionFree,
}

impl Method {
    pub const ALL: [Method; 12] = [
        Method::Newton,
        Method::Simple,
        Method::Gradient,
        Method::GaussNewton,
        Method::ModifiedNewton,
        Method::Descent,
        Method::LinearPlain,
        Method::LinearPrecond,
        Method::MonotoneRegNewton,
        Method::MonotoneSimple,
        Method::NonmonotoneSource,
        Method::CoupledInversionFree,
    ];

    pub const WELLPOSED: [Method; 6] = [
        Method::Newton,
        Method::Simple,
        Method::Gradient,
        Method::GaussNewton,
        Method::ModifiedNewton,
        Method::Descent,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Method::Newton => "newton",
            Method::Simple => "simple",
            Method::Gradient => "gradient",
            Method::GaussNewton => "gauss_newton",
            Method::ModifiedNewton => "modified_newton",
            Method::Descent => "descent",
            Method::LinearPlain => "linear_plain",
            Method::LinearPrecond => "linear_precond",
            Method::MonotoneRegNewton => "monotone_reg_newton",
            Method::MonotoneSimple => "monotone_simple",
            Method::NonmonotoneSource => "nonmonotone_source",
            Method::CoupledInversionFree => "coupled_inversion_free",
        }
    }

    pub fn is_wellposed(&self) -> bool {
        Self::WELLPOSED.contains(self)
    }

    pub fn needs_schedule(&self) -> bool {
        matches!(
            self,
            Method::LinearPlain
                | Method::LinearPrecond
                | Method::MonotoneRegNewton
                | Method::MonotoneSimple
                | Method::NonmonotoneSource
        )
    }
}

/// The state of the coupled flow: the iterate and the approximate inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledState {
    pub u: Vector,
    pub q: Matrix,
}

impl CoupledState {
    pub fn new(u: Vector, q: Matrix) -> Result<Self> {
        let n = u.len();
        if q.shape() != (n, n) {
            return Err(DsmError::Usage(format!(
                "Q must be {n}x{n} to match u, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        Ok(Self { u, q })
    }

    /// `[u; vec(Q)]` with `Q` stored column by column.
    pub fn pack(&self) -> Vector {
        let n = self.u.len();
        let mut x = Vector::zeros(n + n * n);
        x.rows_mut(0, n).copy_from(&self.u);
        x.rows_mut(n, n * n).copy_from_slice(self.q.as_slice());
        x
    }

    pub fn unpack(n: usize, x: &Vector) -> Result<Self> {
        check_dim(n + n * n, x.len())?;
        let u = x.rows(0, n).into_owned();
        let q = Matrix::from_column_slice(n, n, &x.as_slice()[n..]);
        Ok(Self { u, q })
    }
}

enum Cache {
    None,
    Factor(LuFactor),
    Normal { b: Matrix, q: Vector },
}

/// A vector field `Φ(t, x)` for one method on one problem.
///
/// For the coupled method the state `x` is [`CoupledState::pack`]ed.
pub struct PhiField {
    problem: OperatorProblem,
    method: Method,
    schedule: Option<EpsilonSchedule>,
    u_tilde0: Vector,
    noise_level: Option<f64>,
    cache: Cache,
    evals: AtomicU64,
    solves: AtomicU64,
    warned_exit: AtomicBool,
}

impl std::fmt::Debug for PhiField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PhiField")
            .field("problem", &self.problem.name)
            .field("method", &self.method)
            .field("schedule", &self.schedule)
            .finish_non_exhaustive()
    }
}

impl PhiField {
    /// Builds the field for any method; `noisy` replaces the data by `f_delta`.
    pub fn from_method(
        p: &OperatorProblem,
        method: Method,
        schedule: Option<EpsilonSchedule>,
        u_tilde0: Option<Vector>,
        noisy: Option<&NoisyProblem>,
    ) -> Result<Self> {
        let n = p.dim();
        let problem = match noisy {
            Some(np) => {
                check_dim(n, np.f_delta.len())?;
                np.problem()
            }
            None => p.clone(),
        };
        let u_tilde0 = u_tilde0.unwrap_or_else(|| Vector::zeros(n));
        check_dim(n, u_tilde0.len())?;
        if method.needs_schedule() {
            match schedule {
                Some(s) => s.validate()?,
                None => {
                    return Err(DsmError::Usage(format!(
                        "method {} needs a schedule",
                        method.tag()
                    )))
                }
            }
        }

        let cache = match method {
            Method::ModifiedNewton => {
                let a0 = problem.jacobian(&problem.u0)?;
                Cache::Factor(LuFactor::new(&a0).map_err(|e| DsmError::Singular {
                    t: 0.0,
                    state: problem.u0.iter().copied().collect(),
                    reason: format!("F'(u0) is not invertible: {e}"),
                })?)
            }
            Method::LinearPlain | Method::LinearPrecond => {
                let a = problem.linear_matrix().ok_or_else(|| {
                    DsmError::Usage(format!("method {} needs a linear operator", method.tag()))
                })?;
                let b = a.tr_mul(a);
                let q = a.tr_mul(&problem.rhs);
                if let Some(np) = noisy {
                    // The data-error constant is normalized to 1; the true bound is kept visible.
                    log::info!(
                        "noisy linear field: |q - q_delta| <= |A^T| delta = {:e} (delta = {:e})",
                        spectral_norm(a) * np.delta,
                        np.delta
                    );
                }
                Cache::Normal { b, q }
            }
            _ => Cache::None,
        };

        match method {
            Method::MonotoneRegNewton | Method::MonotoneSimple => {
                if !problem.monotone {
                    let s = problem.sector.ok_or_else(|| {
                        DsmError::Usage(format!(
                            "method {} needs a monotone problem or a sector condition",
                            method.tag()
                        ))
                    })?;
                    let eps0 = schedule.expect("checked above").at(0.0);
                    if eps0 >= s.max_shift() {
                        return Err(DsmError::Usage(format!(
                            "eps(0) = {eps0:e} is not below r0 (1 - sin phi0) = {:e}",
                            s.max_shift()
                        )));
                    }
                }
            }
            Method::NonmonotoneSource => {
                let (rate, _) = schedule.expect("checked above").derivative_ratio(0.0);
                if rate >= 1.0 {
                    return Err(DsmError::Usage(format!(
                        "schedule decays too fast: |eps'|/eps = {rate} at t = 0 (needs < 1)"
                    )));
                }
            }
            _ => {}
        }

        Ok(Self {
            problem,
            method,
            schedule,
            u_tilde0,
            noise_level: noisy.map(|np| np.delta),
            cache,
            evals: AtomicU64::new(0),
            solves: AtomicU64::new(0),
            warned_exit: AtomicBool::new(false),
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn schedule(&self) -> Option<&EpsilonSchedule> {
        self.schedule.as_ref()
    }

    /// The problem with the data the field actually uses.
    pub fn problem(&self) -> &OperatorProblem {
        &self.problem
    }

    pub fn u_tilde0(&self) -> &Vector {
        &self.u_tilde0
    }

    pub fn noise_level(&self) -> Option<f64> {
        self.noise_level
    }

    pub fn is_coupled(&self) -> bool {
        self.method == Method::CoupledInversionFree
    }

    pub fn state_dim(&self) -> usize {
        let n = self.problem.dim();
        if self.is_coupled() {
            n + n * n
        } else {
            n
        }
    }

    /// Whether `Φ` depends on `t` only through the state.
    pub fn is_autonomous(&self) -> bool {
        match self.schedule {
            Some(s) if self.method.needs_schedule() => s.is_constant(),
            _ => true,
        }
    }

    /// `ε(t)` if the method uses a schedule.
    pub fn eps(&self, t: f64) -> Option<f64> {
        if self.method.needs_schedule() {
            self.schedule.map(|s| s.at(t))
        } else {
            None
        }
    }

    pub fn field_evals(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn linear_solves(&self) -> u64 {
        self.solves.load(Ordering::Relaxed)
    }

    /// The iterate part of a state.
    pub fn u_of<'a>(&self, x: &'a Vector) -> nalgebra::DVectorView<'a, f64> {
        x.rows(0, self.problem.dim())
    }

    fn singular(&self, t: f64, u: &Vector, e: DsmError) -> DsmError {
        match e {
            DsmError::SolverFailure(reason) => DsmError::Singular {
                t,
                state: u.iter().copied().collect(),
                reason,
            },
            other => other,
        }
    }

    fn solved<T>(&self, t: f64, u: &Vector, r: Result<T>) -> Result<T> {
        self.solves.fetch_add(1, Ordering::Relaxed);
        r.map_err(|e| self.singular(t, u, e))
    }

    /// `Φ(t, x)`.
    pub fn eval(&self, t: f64, x: &Vector) -> Result<Vector> {
        check_dim(self.state_dim(), x.len())?;
        self.evals.fetch_add(1, Ordering::Relaxed);
        let n = self.problem.dim();
        let u: Vector = x.rows(0, n).into_owned();
        if !self.problem.in_ball(&u) && !self.warned_exit.swap(true, Ordering::Relaxed) {
            log::warn!(
                "{} field evaluated outside B(u0, {}) at t = {t}",
                self.method.tag(),
                self.problem.radius
            );
        }
        let p = &self.problem;
        let eps = || self.schedule.expect("validated at construction").at(t);

        let out = match self.method {
            Method::Newton => {
                let a = p.op.jacobian(&u);
                let f = p.residual(&u)?;
                -self.solved(t, &u, lu_solve(&a, &f))?
            }
            Method::Simple => -p.residual(&u)?,
            Method::Gradient => {
                let a = p.op.jacobian(&u);
                -a.tr_mul(&p.residual(&u)?)
            }
            Method::GaussNewton => {
                let a = p.op.jacobian(&u);
                let g = a.tr_mul(&p.residual(&u)?);
                -self.solved(t, &u, lu_solve(&a.tr_mul(&a), &g))?
            }
            Method::ModifiedNewton => {
                let Cache::Factor(lu) = &self.cache else {
                    unreachable!()
                };
                -self.solved(t, &u, lu.solve(&p.residual(&u)?))?
            }
            Method::Descent => {
                let a = p.op.jacobian(&u);
                let f = p.residual(&u)?;
                let value = f.norm_squared();
                let grad = a.tr_mul(&f) * 2.0;
                let g2 = grad.norm_squared();
                if value == 0.0 {
                    Vector::zeros(n)
                } else if g2 == 0.0 || !g2.is_finite() {
                    return Err(DsmError::Singular {
                        t,
                        state: u.iter().copied().collect(),
                        reason: "descent direction vanishes away from a root".into(),
                    });
                } else {
                    grad * (-value / g2)
                }
            }
            Method::LinearPlain => {
                let Cache::Normal { b, q } = &self.cache else {
                    unreachable!()
                };
                -(b * &u + &u * eps() - q)
            }
            Method::LinearPrecond => {
                let Cache::Normal { b, q } = &self.cache else {
                    unreachable!()
                };
                self.solved(t, &u, shifted_solve(b, eps(), q))? - &u
            }
            Method::MonotoneRegNewton => {
                let e = eps();
                let mut a = p.op.jacobian(&u);
                for i in 0..n {
                    a[(i, i)] += e;
                }
                let rhs = p.residual(&u)? + (&u - &self.u_tilde0) * e;
                -self.solved(t, &u, lu_solve(&a, &rhs))?
            }
            Method::MonotoneSimple => -(p.residual(&u)? + (&u - &self.u_tilde0) * eps()),
            Method::NonmonotoneSource => {
                let e = eps();
                let a = p.op.jacobian(&u);
                let rhs = a.tr_mul(&p.residual(&u)?) + (&u - &self.u_tilde0) * e;
                -self.solved(t, &u, shifted_solve(&a.tr_mul(&a), e, &rhs))?
            }
            Method::CoupledInversionFree => {
                let state = CoupledState::unpack(n, x)?;
                let a = p.op.jacobian(&state.u);
                let f = p.residual(&state.u)?;
                let du = -(&state.q * f);
                let dq = a.transpose() - a.tr_mul(&a) * &state.q;
                CoupledState { u: du, q: dq }.pack()
            }
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(DsmError::Numeric(format!(
                "{} field produced non-finite values at t = {t}",
                self.method.tag()
            )));
        }
        Ok(out)
    }
}

/// Field for one of the well-posed methods.
pub fn make_wellposed_phi(p: &OperatorProblem, method: Method) -> Result<PhiField> {
    if !method.is_wellposed() {
        return Err(DsmError::Usage(format!(
            "{} is not a well-posed method",
            method.tag()
        )));
    }
    PhiField::from_method(p, method, None, None, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearVariant {
    Plain,
    Preconditioned,
}

/// Regularized flow for a linear problem.
pub fn make_linear_phi(
    p: &OperatorProblem,
    variant: LinearVariant,
    s: EpsilonSchedule,
    noisy: Option<&NoisyProblem>,
) -> Result<PhiField> {
    let method = match variant {
        LinearVariant::Plain => Method::LinearPlain,
        LinearVariant::Preconditioned => Method::LinearPrecond,
    };
    PhiField::from_method(p, method, Some(s), None, noisy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MonotoneVariant {
    RegularizedNewton,
    Simple,
}

/// Regularized flow for a monotone (or sector-satisfying) problem.
pub fn make_monotone_phi(
    p: &OperatorProblem,
    variant: MonotoneVariant,
    s: EpsilonSchedule,
    u_tilde0: Option<Vector>,
    noisy: Option<&NoisyProblem>,
) -> Result<PhiField> {
    let method = match variant {
        MonotoneVariant::RegularizedNewton => Method::MonotoneRegNewton,
        MonotoneVariant::Simple => Method::MonotoneSimple,
    };
    PhiField::from_method(p, method, Some(s), u_tilde0, noisy)
}

/// Regularized Gauss-Newton flow for non-monotone problems.
pub fn make_nonmonotone_phi(
    p: &OperatorProblem,
    s: EpsilonSchedule,
    u_tilde0: Option<Vector>,
    noisy: Option<&NoisyProblem>,
) -> Result<PhiField> {
    PhiField::from_method(p, Method::NonmonotoneSource, Some(s), u_tilde0, noisy)
}

/// Coupled flow on `(u, Q)` and its packed initial state.
pub fn make_coupled_phi(p: &OperatorProblem, q0: Matrix) -> Result<(PhiField, Vector)> {
    let field = PhiField::from_method(p, Method::CoupledInversionFree, None, None, None)?;
    let x0 = CoupledState::new(p.u0.clone(), q0)?.pack();
    Ok((field, x0))
}

/// `‖I - Q F'(y)‖`.
pub fn lambda_defect(p: &OperatorProblem, q: &Matrix) -> Result<f64> {
    let y = p.y_known.as_ref().ok_or_else(|| {
        DsmError::Usage("the approximate-inverse defect needs a known solution".into())
    })?;
    let a = p.jacobian(y)?;
    let n = p.dim();
    Ok(spectral_norm(&(Matrix::identity(n, n) - q * a)))
}

/// `Φ(t, x)`.
pub fn eval_phi(phi: &PhiField, t: f64, x: &Vector) -> Result<Vector> {
    phi.eval(t, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::FnOperator;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn scalar(
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dphi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f: f64,
    ) -> OperatorProblem {
        let op = FnOperator::componentwise(1, phi, dphi);
        let mut p = OperatorProblem::new("s", Arc::new(op), Vector::from_element(1, f)).unwrap();
        p.radius = 100.0;
        p
    }

    fn v(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    fn lin(a: f64, f: f64) -> OperatorProblem {
        let mut p = OperatorProblem::linear("l", Matrix::from_element(1, 1, a), v(f)).unwrap();
        p.radius = 100.0;
        p.monotone = a >= 0.0;
        p
    }

    fn eval1(phi: &PhiField, u: f64) -> f64 {
        phi.eval(0.0, &v(u)).unwrap()[0]
    }

    #[test]
    fn wellposed_examples() {
        let cube = scalar(|x| x * x * x, |x| 3.0 * x * x, 8.0);
        let newton = make_wellposed_phi(&cube, Method::Newton).unwrap();
        assert_relative_eq!(eval1(&newton, 1.0), 7.0 / 3.0, epsilon = 1e-15);
        assert_eq!(newton.linear_solves(), 1);

        let two = lin(2.0, 0.0);
        assert_eq!(
            eval1(&make_wellposed_phi(&two, Method::Gradient).unwrap(), 1.0),
            -4.0
        );
        assert_relative_eq!(
            eval1(&make_wellposed_phi(&two, Method::GaussNewton).unwrap(), 1.0),
            -1.0,
            epsilon = 1e-15
        );
        let ident = lin(1.0, 0.0);
        assert_relative_eq!(
            eval1(&make_wellposed_phi(&ident, Method::Descent).unwrap(), 2.0),
            -1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn linear_examples() {
        // B = AᵀA = 2 and q = Aᵀf = 4 with A = √2, f = 2√2.
        let r2 = 2f64.sqrt();
        let p = lin(r2, 2.0 * r2);
        let s = EpsilonSchedule::constant(1.0).unwrap();
        let plain = make_linear_phi(&p, LinearVariant::Plain, s, None).unwrap();
        assert_relative_eq!(eval1(&plain, 1.0), 1.0, epsilon = 1e-14);

        let p = lin(r2, r2);
        let pre = make_linear_phi(&p, LinearVariant::Preconditioned, s, None).unwrap();
        assert_relative_eq!(eval1(&pre, 0.0), 2.0 / 3.0, epsilon = 1e-14);
        let tiny = EpsilonSchedule::constant(1e-12).unwrap();
        let pre = make_linear_phi(&p, LinearVariant::Preconditioned, tiny, None).unwrap();
        assert_relative_eq!(eval1(&pre, 0.0), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn linear_requires_linear_operator() {
        let cube = scalar(|x| x * x * x, |x| 3.0 * x * x, 8.0);
        let s = EpsilonSchedule::constant(1.0).unwrap();
        assert!(matches!(
            make_linear_phi(&cube, LinearVariant::Plain, s, None),
            Err(DsmError::Usage(_))
        ));
    }

    #[test]
    fn monotone_examples() {
        let mut ident = scalar(|x| x, |_| 1.0, 0.0);
        ident.monotone = true;
        let s = EpsilonSchedule::constant(1.0).unwrap();
        let reg =
            make_monotone_phi(&ident, MonotoneVariant::RegularizedNewton, s, None, None).unwrap();
        assert_relative_eq!(eval1(&reg, 3.0), -3.0, epsilon = 1e-15);
        assert_eq!(eval1(&reg, 0.0), 0.0);

        let mut cube = scalar(|x| x * x * x, |x| 3.0 * x * x, 0.0);
        cube.monotone = true;
        let half = EpsilonSchedule::constant(0.5).unwrap();
        let simple = make_monotone_phi(&cube, MonotoneVariant::Simple, half, None, None).unwrap();
        assert_eq!(eval1(&simple, 1.0), -1.5);
    }

    #[test]
    fn monotone_rejects_unqualified_problem() {
        let p = scalar(|x| -x, |_| -1.0, 0.0);
        let s = EpsilonSchedule::constant(1.0).unwrap();
        assert!(make_monotone_phi(&p, MonotoneVariant::Simple, s, None, None).is_err());
    }

    #[test]
    fn nonmonotone_examples() {
        let sq = scalar(|x| x * x, |x| 2.0 * x, 0.0);
        let s = EpsilonSchedule::constant(1.0).unwrap();
        let phi = make_nonmonotone_phi(&sq, s, None, None).unwrap();
        assert_relative_eq!(eval1(&phi, 1.0), -0.6, epsilon = 1e-15);

        let ident = scalar(|x| x, |_| 1.0, 0.0);
        let phi = make_nonmonotone_phi(&ident, s, None, None).unwrap();
        assert_relative_eq!(eval1(&phi, 1.0), -1.0, epsilon = 1e-15);

        let shifted = scalar(|x| x * x, |x| 2.0 * x, 4.0);
        let phi = make_nonmonotone_phi(&shifted, s, Some(v(2.0)), None).unwrap();
        assert_eq!(eval1(&phi, 2.0), 0.0);
    }

    #[test]
    fn nonmonotone_rejects_fast_schedule() {
        let sq = scalar(|x| x * x, |x| 2.0 * x, 0.0);
        let fast = EpsilonSchedule::power(1.0, 0.5, 0.9).unwrap();
        assert!(make_nonmonotone_phi(&sq, fast, None, None).is_err());
    }

    #[test]
    fn coupled_examples() {
        let mut p = lin(1.0, 0.0);
        p.u0 = v(1.0);
        let (phi, x0) = make_coupled_phi(&p, Matrix::zeros(1, 1)).unwrap();
        let d = phi.eval(0.0, &x0).unwrap();
        assert_eq!((d[0], d[1]), (0.0, 1.0));
        let (phi, x0) = make_coupled_phi(&p, Matrix::identity(1, 1)).unwrap();
        let d = phi.eval(0.0, &x0).unwrap();
        assert_eq!((d[0], d[1]), (-1.0, 0.0));
        assert_eq!(phi.linear_solves(), 0);
    }

    #[test]
    fn coupled_with_exact_inverse_is_newton() {
        let a = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]);
        let f = Vector::from_vec(vec![1.0, -1.0]);
        let mut p = OperatorProblem::linear("a", a.clone(), f).unwrap();
        p.u0 = Vector::from_vec(vec![0.3, 0.7]);
        let inv = a.clone().try_inverse().unwrap();
        let (coupled, x0) = make_coupled_phi(&p, inv).unwrap();
        let newton = make_wellposed_phi(&p, Method::Newton).unwrap();
        let dc = coupled.eval(0.0, &x0).unwrap();
        let dn = newton.eval(0.0, &p.u0).unwrap();
        assert_relative_eq!(dc.rows(0, 2).into_owned(), dn, epsilon = 1e-14);
    }

    #[test]
    fn lambda_defect_examples() {
        let mut p = lin(2.0, 2.0);
        p.y_known = Some(v(1.0));
        assert_relative_eq!(
            lambda_defect(&p, &Matrix::from_element(1, 1, 0.5)).unwrap(),
            0.0
        );
        assert_eq!(lambda_defect(&p, &Matrix::zeros(1, 1)).unwrap(), 1.0);
        assert_relative_eq!(
            lambda_defect(&p, &Matrix::from_element(1, 1, 0.4)).unwrap(),
            0.2,
            epsilon = 1e-15
        );
        p.y_known = None;
        assert!(matches!(
            lambda_defect(&p, &Matrix::zeros(1, 1)),
            Err(DsmError::Usage(_))
        ));
    }

    #[test]
    fn singular_newton_reports_time_and_state() {
        let sq = scalar(|x| x * x, |x| 2.0 * x, 1.0);
        let phi = make_wellposed_phi(&sq, Method::Newton).unwrap();
        match phi.eval(2.5, &v(0.0)) {
            Err(DsmError::Singular { t, state, .. }) => {
                assert_eq!(t, 2.5);
                assert_eq!(state, vec![0.0]);
            }
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn stationary_at_solution() {
        let cube = scalar(|x| x * x * x, |x| 3.0 * x * x, 8.0);
        for m in Method::WELLPOSED {
            let phi = PhiField::from_method(&cube, m, None, None, None);
            let phi = match phi {
                Ok(phi) => phi,
                Err(_) => continue,
            };
            assert_eq!(eval1(&phi, 2.0), 0.0, "{}", m.tag());
        }
    }

    #[test]
    fn method_tags_round_trip() {
        for m in Method::ALL {
            let s = serde_json::to_string(&m).unwrap();
            assert_eq!(s, format!("\"{}\"", m.tag()));
            assert_eq!(serde_json::from_str::<Method>(&s).unwrap(), m);
        }
    }
}
