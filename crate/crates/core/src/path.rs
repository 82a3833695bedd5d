//! The regularized solution path `F(V) + ε(V - ũ0) = 0` and closed-form
//! spectral solutions of the linear flows.

use nalgebra::SymmetricEigen;

use crate::error::{check_dim, DsmError, Result};
use crate::linalg::{lu_solve, Matrix, Vector};
use crate::operator::OperatorProblem;
use crate::quadrature::adaptive_simpson;
use crate::schedule::EpsilonSchedule;

pub const NEWTON_MAX_ITER: usize = 200;
pub const NEWTON_MAX_HALVINGS: u32 = 30;

/// `‖F(V) + ε(V - ũ0)‖` must fall below this times `1 + ‖f‖`.
pub const PATH_RTOL: f64 = 1e-10;

fn shifted_residual(
    p: &OperatorProblem,
    eps: f64,
    u_tilde0: &Vector,
    v: &Vector,
) -> Result<Vector> {
    Ok(p.residual(v)? + (v - u_tilde0) * eps)
}

/// Solves `F(V) + ε(V - ũ0) = 0` by damped Newton started at `ũ0`.
pub fn solve_v(p: &OperatorProblem, eps: f64, u_tilde0: &Vector) -> Result<Vector> {
    solve_v_from(p, eps, u_tilde0, u_tilde0)
}

/// [`solve_v`] started from `guess`.
pub fn solve_v_from(
    p: &OperatorProblem,
    eps: f64,
    u_tilde0: &Vector,
    guess: &Vector,
) -> Result<Vector> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(DsmError::Usage(format!(
            "regularization must be positive, got {eps}"
        )));
    }
    check_dim(p.dim(), u_tilde0.len())?;
    check_dim(p.dim(), guess.len())?;
    if !p.monotone {
        match p.sector {
            Some(s) if eps < s.max_shift() => {}
            Some(s) => {
                return Err(DsmError::Inapplicable(format!(
                    "eps = {eps:e} is not below the sector shift bound {:e}",
                    s.max_shift()
                )))
            }
            None => {
                return Err(DsmError::Inapplicable(format!(
                    "{}: regularized equation needs a monotone or sector-verified operator",
                    p.name
                )))
            }
        }
    }
    let tol = PATH_RTOL * (1.0 + p.rhs.norm());
    let mut v = guess.clone();
    let mut r = shifted_residual(p, eps, u_tilde0, &v)?;
    let mut rn = r.norm();
    for _ in 0..NEWTON_MAX_ITER {
        if rn <= tol {
            break;
        }
        let mut jac = p.jacobian(&v)?;
        for i in 0..p.dim() {
            jac[(i, i)] += eps;
        }
        let step = lu_solve(&jac, &r)?;
        let mut lam = 1.0;
        let mut accepted = false;
        for _ in 0..=NEWTON_MAX_HALVINGS {
            let trial = &v - &step * lam;
            let tr = shifted_residual(p, eps, u_tilde0, &trial)?;
            let tn = tr.norm();
            // Armijo on ½‖r‖²: the Newton direction has slope -‖r‖².
            if tn * tn <= (1.0 - 1e-4 * lam) * rn * rn {
                v = trial;
                r = tr;
                rn = tn;
                accepted = true;
                break;
            }
            lam *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !(rn <= tol) {
        return Err(DsmError::NotConverged {
            iterations: NEWTON_MAX_ITER,
            residual: rn,
        });
    }
    if p.monotone && u_tilde0.iter().all(|&x| x == 0.0) {
        if let Some(y) = &p.y_known {
            if v.norm() > y.norm() * (1.0 + 1e-8) + tol {
                return Err(DsmError::Numeric(format!(
                    "regularized solution norm {:e} exceeds solution norm {:e} on a monotone problem",
                    v.norm(),
                    y.norm()
                )));
            }
        }
    }
    Ok(v)
}

/// `V(t)` on an increasing grid, each solve warm-started from the previous one.
pub fn v_path(
    p: &OperatorProblem,
    s: &EpsilonSchedule,
    grid: &[f64],
    u_tilde0: &Vector,
) -> Result<Vec<Vector>> {
    let mut out: Vec<Vector> = Vec::with_capacity(grid.len());
    for &t in grid {
        let eps = s.eval(t)?;
        let guess = out.last().unwrap_or(u_tilde0).clone();
        let v = match solve_v_from(p, eps, u_tilde0, &guess) {
            Ok(v) => v,
            Err(DsmError::NotConverged { .. }) if out.last().is_some() => {
                solve_v(p, eps, u_tilde0)?
            }
            Err(e) => return Err(e),
        };
        out.push(v);
    }
    Ok(out)
}

/// Eigenpairs of `B = AᵀA` with eigenvalues clamped at zero, and `q = Aᵀf`
/// in the eigenbasis.
struct NormalSpectrum {
    values: Vec<f64>,
    vectors: Matrix,
    q_coef: Vector,
}

fn normal_spectrum(a: &Matrix, f: &Vector) -> Result<NormalSpectrum> {
    check_dim(a.nrows(), f.len())?;
    let b = a.tr_mul(a);
    let q = a.tr_mul(f);
    let eig = SymmetricEigen::new(b);
    let values = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let q_coef = eig.eigenvectors.tr_mul(&q);
    Ok(NormalSpectrum {
        values,
        vectors: eig.eigenvectors,
        q_coef,
    })
}

/// `∫₀ᵗ g(s) ds` for `g ≥ 0` nondecreasing in `s`, over windows of doubling
/// width going back from `t`, stopping once the rest is provably negligible.
fn backward_integral(g: impl Fn(f64) -> f64, t: f64) -> f64 {
    let mut total = 0.0;
    let mut hi = t;
    let mut width = 1.0;
    while hi > 0.0 {
        let lo = (hi - width).max(0.0);
        let tol = 1e-13 * (total + g(hi) * (hi - lo)).max(f64::MIN_POSITIVE);
        total += adaptive_simpson(&g, lo, hi, tol);
        // g is nondecreasing, so g(lo)·lo bounds the remaining integral.
        if g(lo) * lo <= 1e-17 * total {
            break;
        }
        hi = lo;
        width *= 2.0;
    }
    total
}

/// Solution of `u̇ = -(Bu + ε(t)u - q)` at `t`, `B = AᵀA`, `q = Aᵀf`.
pub fn spectral_flow_plain(
    a: &Matrix,
    f: &Vector,
    u0: &Vector,
    s: &EpsilonSchedule,
    t: f64,
) -> Result<Vector> {
    check_dim(a.ncols(), u0.len())?;
    s.validate()?;
    if t < 0.0 {
        return Err(DsmError::Usage(format!("negative time {t}")));
    }
    if t == 0.0 {
        return Ok(u0.clone());
    }
    let sp = normal_spectrum(a, f)?;
    let c0 = sp.vectors.tr_mul(u0);
    let coef = Vector::from_fn(u0.len(), |k, _| {
        let lam = sp.values[k];
        // Work with exponents of decaying factors only.
        let decay = (-lam * t - s.integral(0.0, t)).exp();
        let forced = match *s {
            EpsilonSchedule::Constant { eps } => {
                let rate = lam + eps;
                if rate * t < 1e-8 {
                    t * (1.0 - 0.5 * rate * t)
                } else {
                    -(-rate * t).exp_m1() / rate
                }
            }
            EpsilonSchedule::Power { .. } => {
                backward_integral(|x| (-lam * (t - x) - s.integral(x, t)).exp(), t)
            }
        };
        decay * c0[k] + forced * sp.q_coef[k]
    });
    Ok(&sp.vectors * coef)
}

/// `K(λ, t) = ∫₀ᵗ e^{s-t} / (λ + ε(s)) ds`.
pub fn precond_kernel(lambda: f64, s: &EpsilonSchedule, t: f64) -> f64 {
    match *s {
        EpsilonSchedule::Constant { eps } => -(-t).exp_m1() / (lambda + eps),
        EpsilonSchedule::Power { .. } => {
            backward_integral(|x| (x - t).exp() / (lambda + s.at(x)), t)
        }
    }
}

/// `j(λ, t) = λ K(λ, t)`, the weight of the source component at time `t`.
pub fn j_factor(lambda: f64, s: &EpsilonSchedule, t: f64) -> f64 {
    if lambda == 0.0 {
        0.0
    } else {
        lambda * precond_kernel(lambda, s, t)
    }
}

/// Solution of `u̇ = -u + (B + ε(t))⁻¹q` at `t`.
pub fn spectral_flow_precond(
    a: &Matrix,
    f: &Vector,
    u0: &Vector,
    s: &EpsilonSchedule,
    t: f64,
) -> Result<Vector> {
    check_dim(a.ncols(), u0.len())?;
    s.validate()?;
    if t < 0.0 {
        return Err(DsmError::Usage(format!("negative time {t}")));
    }
    if t == 0.0 {
        return Ok(u0.clone());
    }
    let sp = normal_spectrum(a, f)?;
    let c0 = sp.vectors.tr_mul(u0);
    let decay = (-t).exp();
    let coef = Vector::from_fn(u0.len(), |k, _| {
        decay * c0[k] + precond_kernel(sp.values[k], s, t) * sp.q_coef[k]
    });
    Ok(&sp.vectors * coef)
}
