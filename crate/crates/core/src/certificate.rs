//! Executable bounds: the Riccati differential-inequality bound, the operator
//! Gronwall bound, and reachability checks for well-posed flows.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{DsmError, Result};
use crate::field::Method;
use crate::integrate::{solve_ode_adaptive, solve_ode_rk4};
use crate::linalg::{lu_solve, min_symmetric_eigenvalue, spectral_norm, Matrix, Vector};
use crate::operator::OperatorProblem;
use crate::quadrature::{adaptive_simpson, integrate_to_infinity};
use crate::scalar_fn::{ScalarFn, QUAD_TOL};
use crate::schedule::EpsilonSchedule;

/// Pointwise slack allowed before a comparison counts as a violation.
pub const VIOLATION_SLACK: f64 = 1e-8;

/// Relative tolerance for the admissibility inequalities, so instances that
/// hold with equality are not rejected by rounding.
const CONDITION_RTOL: f64 = 1e-12;

/// Outcome of comparing a trajectory against a bound on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub conditions_ok: bool,
    /// `max (value - bound)` over the grid; positive means the bound was exceeded.
    pub max_slack: f64,
    /// First grid time where `value > bound + VIOLATION_SLACK`.
    pub first_violation_t: Option<f64>,
    pub samples: usize,
    /// Why the bound could not be applied, when `conditions_ok` is false.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inapplicable: Option<String>,
}

impl BoundReport {
    pub fn violated(&self) -> bool {
        self.first_violation_t.is_some()
    }

    fn inapplicable(reason: String) -> Self {
        Self {
            conditions_ok: false,
            max_slack: f64::NAN,
            first_violation_t: None,
            samples: 0,
            inapplicable: Some(reason),
        }
    }

    pub fn from_samples(pairs: impl IntoIterator<Item = (f64, f64, f64)>) -> Self {
        let mut max_slack = f64::NEG_INFINITY;
        let mut first = None;
        let mut samples = 0;
        for (t, value, bound) in pairs {
            let slack = value - bound;
            samples += 1;
            max_slack = max_slack.max(slack);
            if first.is_none() && !(slack <= VIOLATION_SLACK) {
                first = Some(t);
            }
        }
        Self {
            conditions_ok: true,
            max_slack,
            first_violation_t: first,
            samples,
            inapplicable: None,
        }
    }
}

/// Coefficients of `ġ ≤ -γ g + σ g² + β` with the weight `μ`.
#[derive(Debug, Clone)]
pub struct RiccatiData {
    pub gamma: ScalarFn,
    pub sigma: ScalarFn,
    pub beta: ScalarFn,
    pub mu: ScalarFn,
    pub g0: f64,
    pub t0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RiccatiCondition {
    /// `0 ≤ σ ≤ (μ/2)(γ - μ̇/μ)`.
    Sigma,
    /// `0 ≤ β ≤ (γ - μ̇/μ)/(2μ)`.
    Beta,
    /// `g0 μ(t0) < 1`.
    Initial,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiccatiCheck {
    pub ok: bool,
    pub first_violation: Option<(f64, RiccatiCondition)>,
}

impl RiccatiData {
    /// The constant-coefficient instance used in examples and tests.
    pub fn constant(gamma: f64, sigma: f64, beta: f64, mu: f64, g0: f64) -> Self {
        Self {
            gamma: ScalarFn::Constant(gamma),
            sigma: ScalarFn::Constant(sigma),
            beta: ScalarFn::Constant(beta),
            mu: ScalarFn::Constant(mu),
            g0,
            t0: 0.0,
        }
    }

    /// `γ - μ̇/μ`.
    pub fn rate(&self, t: f64) -> f64 {
        self.gamma.eval(t) - self.mu.derivative(t) / self.mu.eval(t)
    }

    /// Right-hand side of the equality case `ġ = -γ g + σ g² + β`.
    pub fn rhs(&self, t: f64, g: f64) -> f64 {
        -self.gamma.eval(t) * g + self.sigma.eval(t) * g * g + self.beta.eval(t)
    }
}

fn le(a: f64, b: f64) -> bool {
    a <= b + CONDITION_RTOL * b.abs().max(a.abs()) + f64::MIN_POSITIVE
}

/// Checks the admissibility conditions at every grid time.
pub fn riccati_conditions(d: &RiccatiData, grid: &[f64]) -> RiccatiCheck {
    let fail = |t, c| RiccatiCheck {
        ok: false,
        first_violation: Some((t, c)),
    };
    if !(d.g0 >= 0.0 && d.g0 * d.mu.eval(d.t0) < 1.0) {
        return fail(d.t0, RiccatiCondition::Initial);
    }
    for &t in grid {
        let mu = d.mu.eval(t);
        let rate = d.rate(t);
        let sigma = d.sigma.eval(t);
        let beta = d.beta.eval(t);
        if !(mu > 0.0) || !(sigma >= 0.0) || !le(sigma, 0.5 * mu * rate) {
            return fail(t, RiccatiCondition::Sigma);
        }
        if !(beta >= 0.0) || !le(beta, rate / (2.0 * mu)) {
            return fail(t, RiccatiCondition::Beta);
        }
    }
    RiccatiCheck {
        ok: true,
        first_violation: None,
    }
}

/// `ν(t) = [1/(1 - μ(t0) g0) + ½ ∫_{t0}^{t} (γ - μ̇/μ)]⁻¹`, without checks.
pub fn riccati_nu(d: &RiccatiData, t: f64) -> f64 {
    // ∫ μ̇/μ = ln(μ(t)/μ(t0)) exactly.
    let log_mu = (d.mu.eval(t) / d.mu.eval(d.t0)).ln();
    let integral = d.gamma.integral(d.t0, t) - log_mu;
    1.0 / (1.0 / (1.0 - d.mu.eval(d.t0) * d.g0) + 0.5 * integral)
}

fn uniform_grid(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|k| t0 + (t1 - t0) * k as f64 / n as f64)
        .collect()
}

/// `(ν(t), (1 - ν(t))/μ(t))`, after checking the conditions on `[t0, t]`.
pub fn riccati_bound(d: &RiccatiData, t: f64) -> Result<(f64, f64)> {
    if t < d.t0 {
        return Err(DsmError::Usage(format!("t = {t} precedes t0 = {}", d.t0)));
    }
    let check = riccati_conditions(d, &uniform_grid(d.t0, t, 64));
    if let Some((tv, c)) = check.first_violation {
        return Err(DsmError::Inapplicable(format!(
            "condition {c:?} fails at t = {tv}"
        )));
    }
    let nu = riccati_nu(d, t);
    Ok((nu, (1.0 - nu) / d.mu.eval(t)))
}

/// Integrates the equality case and compares it with the bound on every
/// accepted step. `bound_scale` multiplies the bound (1 for a faithful check).
pub fn riccati_compare(d: &RiccatiData, t_max: f64, bound_scale: f64) -> BoundReport {
    let check = riccati_conditions(d, &uniform_grid(d.t0, t_max, 400));
    if let Some((tv, c)) = check.first_violation {
        return BoundReport::inapplicable(format!("condition {c:?} fails at t = {tv}"));
    }
    let f = |t: f64, x: &Vector| -> Result<Vector> {
        let g = x[0];
        // The bound tops out at 1/μ; past a large multiple the solution is
        // blowing up and the comparison has already failed.
        if !(g.abs() <= 1e6 * (1.0 + 1.0 / d.mu.eval(t))) {
            return Err(DsmError::Numeric(format!("solution blew up at t = {t}")));
        }
        Ok(Vector::from_element(1, d.rhs(t, g)))
    };
    let x0 = Vector::from_element(1, d.g0);
    let (times, states, blowup) =
        match solve_ode_adaptive(f, d.t0, &x0, t_max, 1e-11, 1e-13, 1_000_000) {
            Ok((t, s)) => (t, s, None),
            Err(e) => {
                log::warn!("riccati comparison aborted: {e}");
                (vec![d.t0], vec![x0.clone()], Some(e))
            }
        };
    let mut report = BoundReport::from_samples(times.iter().zip(&states).map(|(&t, x)| {
        let nu = riccati_nu(d, t);
        (t, x[0], bound_scale * (1.0 - nu) / d.mu.eval(t))
    }));
    if let Some(e) = blowup {
        let t = match e {
            DsmError::Stiffness { t, .. } => t,
            _ => d.t0,
        };
        report.first_violation_t.get_or_insert(t);
        report.max_slack = f64::INFINITY;
    }
    report
}

/// The instance arising for the regularized Newton flow on monotone problems:
/// `γ = 1`, `σ = M/(2ε)`, `β = r|ε̇|/ε`, `μ = 2M/ε`.
pub fn theorem42_riccati(m: f64, r: f64, schedule: EpsilonSchedule, g0: f64) -> RiccatiData {
    RiccatiData {
        gamma: ScalarFn::Constant(1.0),
        sigma: ScalarFn::EpsPower {
            scale: 0.5 * m,
            power: -1.0,
            schedule,
        },
        beta: ScalarFn::EpsLogRate { scale: r, schedule },
        mu: ScalarFn::mu_inverse_eps(m, schedule),
        g0,
        t0: 0.0,
    }
}

type MatrixFn = Arc<dyn Fn(f64) -> Matrix + Send + Sync>;

/// `Q̇ = -T(t) Q + G(t)` with `(T(t)h, h) ≥ ε(t)‖h‖²`.
#[derive(Clone)]
pub struct GronwallData {
    pub t_of: MatrixFn,
    pub g_of: MatrixFn,
    pub q0: Matrix,
    pub eps: ScalarFn,
}

impl std::fmt::Debug for GronwallData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GronwallData")
            .field("q0", &self.q0)
            .field("eps", &self.eps)
            .finish_non_exhaustive()
    }
}

impl GronwallData {
    pub fn new(
        t_of: impl Fn(f64) -> Matrix + Send + Sync + 'static,
        g_of: impl Fn(f64) -> Matrix + Send + Sync + 'static,
        q0: Matrix,
        eps: ScalarFn,
    ) -> Self {
        Self {
            t_of: Arc::new(t_of),
            g_of: Arc::new(g_of),
            q0,
            eps,
        }
    }
}

/// Rayleigh-quotient check of the coercivity `λ_min(sym T(t)) ≥ ε(t)` on a grid.
pub fn gronwall_coercivity(d: &GronwallData, grid: &[f64]) -> std::result::Result<(), f64> {
    for &t in grid {
        let lam = min_symmetric_eigenvalue(&(d.t_of)(t));
        let eps = d.eps.eval(t);
        if !(eps > 0.0) || lam < eps - 1e-10 * eps.abs().max(1.0) {
            return Err(t);
        }
    }
    Ok(())
}

/// `∫_a^b ‖G(s)‖ e^{-∫_s^b ε} ds`.
fn forced_increment(d: &GronwallData, a: f64, b: f64) -> f64 {
    adaptive_simpson(
        |s| spectral_norm(&(d.g_of)(s)) * (-d.eps.integral(s, b)).exp(),
        a,
        b,
        QUAD_TOL,
    )
}

/// `e^{-∫₀ᵗ ε} [‖Q0‖ + ∫₀ᵗ ‖G(s)‖ e^{∫₀ˢ ε} ds]`.
pub fn gronwall_bound(d: &GronwallData, t: f64) -> f64 {
    gronwall_bounds(d, &[0.0, t]).pop().unwrap_or(f64::NAN)
}

/// [`gronwall_bound`] on an increasing grid starting at 0, accumulated
/// interval by interval so no exponential grows.
pub fn gronwall_bounds(d: &GronwallData, grid: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut b = spectral_norm(&d.q0);
    let mut prev = 0.0;
    for &t in grid {
        if t > prev {
            b = b * (-d.eps.integral(prev, t)).exp() + forced_increment(d, prev, t);
            prev = t;
        }
        out.push(b);
    }
    out
}

/// Integrates `Q` with matrix RK4 on `steps` equal steps and compares `‖Q(t)‖`
/// with the bound at every step.
pub fn gronwall_compare(
    d: &GronwallData,
    t_max: f64,
    steps: usize,
    bound_scale: f64,
) -> BoundReport {
    let grid = uniform_grid(0.0, t_max, steps.max(1));
    if let Err(t) = gronwall_coercivity(d, &grid) {
        return BoundReport::inapplicable(format!("coercivity fails at t = {t}"));
    }
    let (rows, cols) = d.q0.shape();
    let f = |t: f64, x: &Vector| -> Result<Vector> {
        let q = Matrix::from_column_slice(rows, cols, x.as_slice());
        let dq = -(d.t_of)(t) * q + (d.g_of)(t);
        Ok(Vector::from_column_slice(dq.as_slice()))
    };
    let x0 = Vector::from_column_slice(d.q0.as_slice());
    let (times, states) = match solve_ode_rk4(f, 0.0, &x0, t_max, steps) {
        Ok(r) => r,
        Err(e) => return BoundReport::inapplicable(format!("integration failed: {e}")),
    };
    let bounds = gronwall_bounds(d, &times);
    BoundReport::from_samples(times.iter().zip(&states).zip(bounds).map(|((&t, x), b)| {
        let q = Matrix::from_column_slice(rows, cols, x.as_slice());
        (t, spectral_norm(&q), bound_scale * b)
    }))
}

/// Inputs of the reachability theorem for well-posed flows:
/// `(F'Φ, F) ≤ -g1 ‖F‖^a` and `‖Φ‖ ≤ g2 ‖F‖` on `B(u0, R)`.
#[derive(Debug, Clone)]
pub struct WellPosedCert {
    pub a: f64,
    pub g1: ScalarFn,
    pub g2: ScalarFn,
    pub f0_norm: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `a = 2`: exponential decay of the residual.
    Exponential,
    /// `a < 2`: the solution is reached in finite time.
    FiniteTime,
    /// `a > 2`: algebraic decay.
    Algebraic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WellPosedReport {
    pub reachable: bool,
    pub regime: Regime,
    /// Time after which `u(t) = y`, in the finite-time regime.
    pub t_finite: Option<f64>,
    /// The quantity compared with `R`.
    pub path_length_bound: f64,
    pub radius: f64,
}

/// Whether `∫₀^∞ g = ∞`. Closed form for the built-in families; otherwise the
/// increments over doubling windows must not shrink geometrically.
pub fn integral_diverges(g: &ScalarFn) -> bool {
    match g {
        ScalarFn::Constant(c) => *c > 0.0,
        ScalarFn::EpsPower {
            scale,
            power,
            schedule,
        } => {
            *scale > 0.0
                && match *schedule {
                    EpsilonSchedule::Power { b, .. } => power * b <= 1.0,
                    EpsilonSchedule::Constant { .. } => true,
                }
        }
        ScalarFn::EpsLogRate { scale, schedule } => *scale > 0.0 && !schedule.is_constant(),
        ScalarFn::Custom { .. } => {
            let increments: Vec<f64> = (20..40)
                .map(|k| {
                    let lo = 2f64.powi(k);
                    g.integral(lo, 2.0 * lo)
                })
                .collect();
            let (first, last) = (increments[0], increments[increments.len() - 1]);
            // Geometric shrinkage by 1/2 per window over 19 windows is 2^-19.
            first > 0.0 && last >= first * 2f64.powi(-19) * 4.0
        }
    }
}

impl WellPosedCert {
    pub fn constant(a: f64, c1: f64, c2: f64, f0_norm: f64, radius: f64) -> Self {
        Self {
            a,
            g1: ScalarFn::Constant(c1),
            g2: ScalarFn::Constant(c2),
            f0_norm,
            radius,
        }
    }

    pub fn regime(&self) -> Regime {
        if self.a == 2.0 {
            Regime::Exponential
        } else if self.a < 2.0 {
            Regime::FiniteTime
        } else {
            Regime::Algebraic
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.f0_norm >= 0.0 && self.radius > 0.0) {
            return Err(DsmError::Usage("need a > 0, ‖F(u0)‖ ≥ 0, R > 0".into()));
        }
        Ok(())
    }

    /// `G(t) = g2(t) exp(-∫₀ᵗ g1)`.
    pub fn weight(&self, t: f64) -> f64 {
        self.g2.eval(t) * (-self.g1.integral(0.0, t)).exp()
    }

    /// `∫_t^∞ G`.
    pub fn weight_tail(&self, t: f64) -> Result<f64> {
        match (&self.g1, &self.g2) {
            (ScalarFn::Constant(c1), ScalarFn::Constant(c2)) if *c1 > 0.0 => {
                Ok(c2 / c1 * (-c1 * t).exp())
            }
            _ => integrate_to_infinity(|s| self.weight(s), t, QUAD_TOL),
        }
    }

    /// `h(t) = [‖F0‖^{2-a} + (a-2) ∫₀ᵗ g1]^{1/(2-a)}`, the residual bound for
    /// `a ≠ 2`; zero once the bracket reaches zero.
    pub fn decay(&self, t: f64) -> f64 {
        let p = 2.0 - self.a;
        let base = self.f0_norm.powf(p) - p * self.g1.integral(0.0, t);
        if base <= 0.0 {
            0.0
        } else {
            base.powf(1.0 / p)
        }
    }

    /// The time `T` with `∫₀ᵀ g1 = ‖F0‖^{2-a}/(2-a)`, for `a < 2`.
    pub fn finite_time(&self) -> Result<f64> {
        if self.a >= 2.0 {
            return Err(DsmError::Usage("finite reach time needs a < 2".into()));
        }
        let target = self.f0_norm.powf(2.0 - self.a) / (2.0 - self.a);
        if target == 0.0 {
            return Ok(0.0);
        }
        if let ScalarFn::Constant(c) = self.g1 {
            return Ok(target / c);
        }
        let mut hi = 1.0;
        while self.g1.integral(0.0, hi) < target {
            hi *= 2.0;
            if hi > crate::quadrature::MAX_HORIZON {
                return Err(DsmError::Inapplicable(
                    "∫ g1 does not reach the required level".into(),
                ));
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.g1.integral(0.0, mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * hi {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Upper bound on `‖u(t) - y‖`.
    pub fn error_bound(&self, t: f64) -> Result<f64> {
        match self.regime() {
            Regime::Exponential => Ok(self.f0_norm * self.weight_tail(t)?),
            Regime::FiniteTime => {
                let tf = self.finite_time()?;
                if t >= tf {
                    Ok(0.0)
                } else {
                    Ok(adaptive_simpson(
                        |s| self.g2.eval(s) * self.decay(s),
                        t,
                        tf,
                        QUAD_TOL,
                    ))
                }
            }
            Regime::Algebraic => {
                integrate_to_infinity(|s| self.g2.eval(s) * self.decay(s), t, QUAD_TOL)
            }
        }
    }

    /// Upper bound on `‖F(u(t))‖`.
    pub fn residual_bound(&self, t: f64) -> f64 {
        match self.regime() {
            Regime::Exponential => self.f0_norm * (-self.g1.integral(0.0, t)).exp(),
            _ => self.decay(t),
        }
    }
}

/// Decides whether the flow stays in `B(u0, R)` and converges.
pub fn wellposed_certificate(c: &WellPosedCert) -> Result<WellPosedReport> {
    c.validate()?;
    if !integral_diverges(&c.g1) {
        return Err(DsmError::Inapplicable("∫₀^∞ g1 must diverge".into()));
    }
    let regime = c.regime();
    let (length, t_finite) = match regime {
        Regime::Exponential => (c.f0_norm * c.weight_tail(0.0)?, None),
        Regime::FiniteTime => {
            let tf = c.finite_time()?;
            (c.f0_norm * c.g2.integral(0.0, tf), Some(tf))
        }
        Regime::Algebraic => (c.error_bound(0.0)?, None),
    };
    Ok(WellPosedReport {
        reachable: length <= c.radius,
        regime,
        t_finite,
        path_length_bound: length,
        radius: c.radius,
    })
}

/// Constants of a well-posed problem entering the example certificates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WellPosedConstants {
    /// `sup ‖F'(u)⁻¹‖` on the ball.
    pub m1: f64,
    /// `sup ‖F'(u)‖` on the ball.
    pub big_m1: f64,
    /// Lipschitz constant of `F'` on the ball.
    pub big_m2: f64,
    /// `‖F'(u0)⁻¹‖`.
    pub m0: f64,
    /// Lower bound of `F'` for the simple-iteration flow.
    pub coercivity: Option<f64>,
}

impl WellPosedConstants {
    pub fn from_problem(p: &OperatorProblem) -> Result<Self> {
        let m1 = p.bounds.inverse.ok_or_else(|| {
            DsmError::Inapplicable(format!("{}: no bound on the inverse derivative", p.name))
        })?;
        let a0 = p.jacobian(&p.u0)?;
        let n = p.dim();
        let cols: Result<Vec<Vector>> = (0..n)
            .map(|j| lu_solve(&a0, &Vector::from_fn(n, |i, _| f64::from(i == j))))
            .collect();
        let inv = Matrix::from_columns(&cols?);
        Ok(Self {
            m1,
            big_m1: p.bounds.m1,
            big_m2: p.bounds.m2,
            m0: spectral_norm(&inv),
            coercivity: p.bounds.coercivity,
        })
    }

    /// `(c1, c2, R)` for a well-posed flow; the modified Newton flow prescribes
    /// its own radius `(2 M2 m0)⁻¹`.
    pub fn example(&self, method: Method, radius: f64) -> Result<(f64, f64, f64)> {
        let Self {
            m1,
            big_m1,
            big_m2,
            m0,
            coercivity,
        } = *self;
        Ok(match method {
            Method::Newton => (1.0, m1, radius),
            Method::Simple => {
                let c = coercivity
                    .ok_or_else(|| DsmError::Inapplicable("simple flow needs F' ≥ c > 0".into()))?;
                (c, 1.0, radius)
            }
            Method::Gradient => (1.0 / (m1 * m1), big_m1, radius),
            Method::GaussNewton => (1.0, m1 * m1 * big_m1, radius),
            Method::ModifiedNewton => {
                if !(big_m2 > 0.0) {
                    return Err(DsmError::Inapplicable(
                        "modified Newton radius needs M2 > 0".into(),
                    ));
                }
                (0.5, m0, 1.0 / (2.0 * big_m2 * m0))
            }
            Method::Descent => (0.5, 0.5 * m1, radius),
            other => {
                return Err(DsmError::Usage(format!(
                    "{} is not a well-posed flow",
                    other.tag()
                )));
            }
        })
    }
}

/// The certificate for a well-posed flow started at `p.u0`.
pub fn example_certificate(p: &OperatorProblem, method: Method) -> Result<WellPosedCert> {
    let k = WellPosedConstants::from_problem(p)?;
    let (c1, c2, radius) = k.example(method, p.radius)?;
    let f0 = p.residual(&p.u0)?.norm();
    Ok(WellPosedCert::constant(2.0, c1, c2, f0, radius))
}
