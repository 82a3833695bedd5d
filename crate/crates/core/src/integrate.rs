//! Explicit time stepping for `u̇ = Φ(t, u)` and the discrete schemes.

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{check_dim, DsmError, Result};
use crate::field::{lambda_defect, CoupledState, PhiField};
use crate::linalg::{lu_solve, Matrix, Vector};
use crate::operator::OperatorProblem;
use crate::stopping::{stopping_time, StopCondition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepperKind {
    Euler,
    Rk4,
    Rk45Adaptive,
}

impl StepperKind {
    pub const ALL: [StepperKind; 3] = [
        StepperKind::Euler,
        StepperKind::Rk4,
        StepperKind::Rk45Adaptive,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            StepperKind::Euler => "euler",
            StepperKind::Rk4 => "rk4",
            StepperKind::Rk45Adaptive => "rk45_adaptive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepperSpec {
    pub kind: StepperKind,
    /// Step for fixed-step kinds, initial step for the adaptive kind.
    pub h: f64,
    pub rtol: f64,
    pub atol: f64,
    pub t_max: f64,
    pub max_steps: usize,
}

impl Default for StepperSpec {
    fn default() -> Self {
        Self {
            kind: StepperKind::Rk45Adaptive,
            h: 1e-2,
            rtol: 1e-8,
            atol: 1e-10,
            t_max: 100.0,
            max_steps: 1_000_000,
        }
    }
}

impl StepperSpec {
    pub fn fixed(kind: StepperKind, h: f64, t_max: f64) -> Self {
        Self {
            kind,
            h,
            t_max,
            ..Self::default()
        }
    }

    pub fn adaptive(rtol: f64, atol: f64, t_max: f64) -> Self {
        Self {
            rtol,
            atol,
            t_max,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(DsmError::Usage(format!(
                "step h must be positive, got {}",
                self.h
            )));
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(DsmError::Usage("rtol and atol must be positive".into()));
        }
        if !(self.t_max > 0.0) {
            return Err(DsmError::Usage(format!(
                "t_max must be positive, got {}",
                self.t_max
            )));
        }
        if self.max_steps < 1 {
            return Err(DsmError::Usage("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "reason", content = "detail")]
pub enum StopReason {
    /// Reached the end of the requested interval.
    EndTime,
    /// Reached the stopping time of a time rule.
    StoppingTime,
    /// An in-run stop condition fired.
    Condition,
    MaxSteps,
    /// A discrete iteration met its tolerance.
    Converged,
    Error(String),
}

/// Samples of one run, one entry per accepted step (plus the initial state).
#[derive(Debug, Clone, Default)]
pub struct TrajectoryLog {
    pub method: String,
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub residual_norms: Vec<f64>,
    pub eps_values: Vec<Option<f64>>,
    pub error_norms: Vec<Option<f64>>,
    /// `‖I - Q F'(y)‖` for coupled runs with a known solution.
    pub lambda_defects: Vec<Option<f64>>,
    pub field_evals: u64,
    pub linear_solves: u64,
    pub rejected_steps: u64,
    pub stop_reason: Option<StopReason>,
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<&Vector> {
        self.states.last()
    }

    pub fn final_time(&self) -> Option<f64> {
        self.times.last().copied()
    }

    /// CSV with header `t,res_norm,eps,err_norm`; absent values are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,res_norm,eps,err_norm\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for i in 0..self.len() {
            let _ = writeln!(
                out,
                "{:e},{:e},{},{}",
                self.times[i],
                self.residual_norms[i],
                opt(self.eps_values[i]),
                opt(self.error_norms[i])
            );
        }
        out
    }

    /// Run summary for JSON reports.
    pub fn summary(&self) -> serde_json::Value {
        let last = |v: &Vec<Option<f64>>| v.last().copied().flatten();
        json!({
            "method": self.method,
            "samples": self.len(),
            "t_final": self.final_time(),
            "final_residual_norm": self.residual_norms.last(),
            "final_eps": last(&self.eps_values),
            "final_error_norm": last(&self.error_norms),
            "final_state": self.final_state().map(|s| s.as_slice().to_vec()),
            "field_evals": self.field_evals,
            "linear_solves": self.linear_solves,
            "rejected_steps": self.rejected_steps,
            "stop_reason": self.stop_reason,
        })
    }
}

/// A failed run together with everything logged before the failure.
#[derive(Debug, Clone)]
pub struct IntegrateError {
    pub error: DsmError,
    pub partial: Box<TrajectoryLog>,
}

impl fmt::Display for IntegrateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} samples)", self.error, self.partial.len())
    }
}

impl std::error::Error for IntegrateError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

pub type RunResult = std::result::Result<TrajectoryLog, IntegrateError>;

fn bare(error: DsmError) -> IntegrateError {
    IntegrateError {
        error,
        partial: Box::default(),
    }
}

struct Recorder<'a> {
    phi: &'a PhiField,
    log: TrajectoryLog,
    y: Option<&'a Vector>,
    evals0: u64,
    solves0: u64,
}

impl<'a> Recorder<'a> {
    fn new(phi: &'a PhiField) -> Self {
        Self {
            phi,
            log: TrajectoryLog {
                method: phi.method().tag().to_string(),
                ..Default::default()
            },
            y: phi.problem().y_known.as_ref(),
            evals0: phi.field_evals(),
            solves0: phi.linear_solves(),
        }
    }

    /// Appends a sample and returns its residual norm.
    fn record(&mut self, t: f64, x: &Vector) -> Result<f64> {
        let p = self.phi.problem();
        let n = p.dim();
        let u = x.rows(0, n).into_owned();
        let res = p.residual(&u)?.norm();
        self.log.times.push(t);
        self.log.residual_norms.push(res);
        self.log.eps_values.push(self.phi.eps(t));
        self.log.error_norms.push(self.y.map(|y| (&u - y).norm()));
        let defect = if self.phi.is_coupled() && self.y.is_some() {
            Some(lambda_defect(p, &CoupledState::unpack(n, x)?.q)?)
        } else {
            None
        };
        self.log.lambda_defects.push(defect);
        self.log.states.push(x.clone());
        Ok(res)
    }

    fn finish(mut self, reason: StopReason) -> TrajectoryLog {
        self.log.field_evals = self.phi.field_evals() - self.evals0;
        self.log.linear_solves = self.phi.linear_solves() - self.solves0;
        self.log.stop_reason = Some(reason);
        self.log
    }

    fn fail(self, error: DsmError) -> IntegrateError {
        let reason = StopReason::Error(error.to_string());
        IntegrateError {
            error,
            partial: Box::new(self.finish(reason)),
        }
    }
}

/// Integrates from `t = 0`, `x(0) = x0` until `t_max`, `max_steps`, or the stop
/// condition. A time rule shortens the horizon to its stopping time.
pub fn integrate(
    phi: &PhiField,
    x0: &Vector,
    spec: &StepperSpec,
    stop: Option<&StopCondition>,
) -> RunResult {
    integrate_span(phi, 0.0, x0, spec.t_max, spec, stop)
}

/// As [`integrate`] on `[t0, t_end]`.
pub fn integrate_span(
    phi: &PhiField,
    t0: f64,
    x0: &Vector,
    t_end: f64,
    spec: &StepperSpec,
    stop: Option<&StopCondition>,
) -> RunResult {
    spec.validate().map_err(bare)?;
    check_dim(phi.state_dim(), x0.len()).map_err(bare)?;
    if !(t_end >= t0) {
        return Err(bare(DsmError::Usage(format!(
            "end time {t_end} precedes start time {t0}"
        ))));
    }
    let mut t_stop = t_end;
    let mut end_reason = StopReason::EndTime;
    let mut in_run = None;
    if let Some(rule) = stop {
        rule.validate().map_err(bare)?;
        if rule.kind.is_time_rule() {
            let s = phi.schedule().ok_or_else(|| {
                bare(DsmError::Usage(format!(
                    "rule {} needs a schedule",
                    rule.kind.tag()
                )))
            })?;
            let td = stopping_time(rule, s).map_err(bare)?;
            if td <= t_end {
                t_stop = td.max(t0);
                end_reason = StopReason::StoppingTime;
            }
        } else {
            in_run = Some(rule);
        }
    }

    let mut rec = Recorder::new(phi);
    let res0 = match rec.record(t0, x0) {
        Ok(r) => r,
        Err(e) => return Err(rec.fail(e)),
    };
    if in_run.is_some_and(|r| r.fires(res0)) {
        return Ok(rec.finish(StopReason::Condition));
    }
    let outcome = match spec.kind {
        StepperKind::Euler | StepperKind::Rk4 => fixed_loop(&mut rec, t0, x0, t_stop, spec, in_run),
        StepperKind::Rk45Adaptive => adaptive_loop(&mut rec, t0, x0, t_stop, spec, in_run),
    };
    match outcome {
        Ok(Some(reason)) => Ok(rec.finish(reason)),
        Ok(None) => Ok(rec.finish(end_reason)),
        Err(e) => Err(rec.fail(e)),
    }
}

fn euler_step(phi: &PhiField, t: f64, x: &Vector, h: f64) -> Result<Vector> {
    Ok(x + phi.eval(t, x)? * h)
}

fn rk4_step(phi: &PhiField, t: f64, x: &Vector, h: f64) -> Result<Vector> {
    let k1 = phi.eval(t, x)?;
    let k2 = phi.eval(t + 0.5 * h, &(x + &k1 * (0.5 * h)))?;
    let k3 = phi.eval(t + 0.5 * h, &(x + &k2 * (0.5 * h)))?;
    let k4 = phi.eval(t + h, &(x + &k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Fixed-step loop on the grid `t0 + k h`. When the interval is not a whole
/// number of steps, the last step is shortened to land on `t_end`.
fn fixed_loop(
    rec: &mut Recorder<'_>,
    t0: f64,
    x0: &Vector,
    t_end: f64,
    spec: &StepperSpec,
    in_run: Option<&StopCondition>,
) -> Result<Option<StopReason>> {
    let h = spec.h;
    let span = t_end - t0;
    let whole = (span / h).round();
    let (n_full, tail) = if (whole * h - span).abs() <= 1e-9 * span.max(h) {
        (whole as usize, 0.0)
    } else {
        let n = (span / h).floor();
        (n as usize, span - n * h)
    };
    let phi = rec.phi;
    let mut x = x0.clone();
    let total = n_full + usize::from(tail > 0.0);
    for k in 0..total {
        if k >= spec.max_steps {
            return Ok(Some(StopReason::MaxSteps));
        }
        let t = t0 + k as f64 * h;
        let (step, t_next) = if k < n_full {
            (h, t0 + (k + 1) as f64 * h)
        } else {
            (tail, t_end)
        };
        x = match spec.kind {
            StepperKind::Euler => euler_step(phi, t, &x, step)?,
            _ => rk4_step(phi, t, &x, step)?,
        };
        let res = rec.record(t_next, &x)?;
        if in_run.is_some_and(|r| r.fires(res)) {
            return Ok(Some(StopReason::Condition));
        }
    }
    Ok(None)
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Differences between the fifth- and fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

fn adaptive_loop(
    rec: &mut Recorder<'_>,
    t0: f64,
    x0: &Vector,
    t_end: f64,
    spec: &StepperSpec,
    in_run: Option<&StopCondition>,
) -> Result<Option<StopReason>> {
    let phi = rec.phi;
    let mut t = t0;
    let mut x = x0.clone();
    if t_end <= t0 {
        return Ok(None);
    }
    let mut k1 = phi.eval(t, &x)?;
    let mut h = spec.h.min(t_end - t0);
    let mut steps = 0usize;
    let mut rejected_last = false;
    while t < t_end {
        if steps >= spec.max_steps {
            return Ok(Some(StopReason::MaxSteps));
        }
        let remaining = t_end - t;
        let last = h >= remaining * (1.0 - 1e-12);
        if last {
            h = remaining;
        }
        let min_h = 1e-14 * t.abs().max(1.0);
        if h < min_h {
            return Err(DsmError::Stiffness { t, h });
        }
        let (x_new, k7, err) =
            dp45_attempt(&|t, x| phi.eval(t, x), t, &x, &k1, h, spec.rtol, spec.atol)?;
        if err <= 1.0 {
            t = if last { t_end } else { t + h };
            x = x_new;
            k1 = k7;
            steps += 1;
            let res = rec.record(t, &x)?;
            if in_run.is_some_and(|r| r.fires(res)) {
                return Ok(Some(StopReason::Condition));
            }
            h *= step_factor(err, if rejected_last { 1.0 } else { MAX_FACTOR });
            rejected_last = false;
        } else {
            rec.log.rejected_steps += 1;
            h *= step_factor(err, 1.0);
            rejected_last = true;
        }
    }
    Ok(None)
}

/// One Dormand-Prince attempt from `(t, x)` with `k1 = f(t, x)`. Returns the
/// fifth-order state, `f` at that state, and the RMS scaled error estimate.
fn dp45_attempt<F>(
    f: &F,
    t: f64,
    x: &Vector,
    k1: &Vector,
    h: f64,
    rtol: f64,
    atol: f64,
) -> Result<(Vector, Vector, f64)>
where
    F: Fn(f64, &Vector) -> Result<Vector>,
{
    let k2 = f(t + C2 * h, &(x + k1 * (A21 * h)))?;
    let k3 = f(t + C3 * h, &(x + (k1 * A31 + &k2 * A32) * h))?;
    let k4 = f(t + C4 * h, &(x + (k1 * A41 + &k2 * A42 + &k3 * A43) * h))?;
    let k5 = f(
        t + C5 * h,
        &(x + (k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h),
    )?;
    let k6 = f(
        t + h,
        &(x + (k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h),
    )?;
    let x_new = x + (k1 * B1 + &k3 * B3 + &k4 * B4 + &k5 * B5 + &k6 * B6) * h;
    let k7 = f(t + h, &x_new)?;
    let err_vec = (k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
    let sum: f64 = err_vec
        .iter()
        .zip(x.iter().zip(x_new.iter()))
        .map(|(e, (a, b))| {
            let r = e / (atol + rtol * a.abs().max(b.abs()));
            r * r
        })
        .sum();
    let err = (sum / err_vec.len().max(1) as f64).sqrt();
    if !err.is_finite() {
        return Err(DsmError::Numeric(format!(
            "non-finite error estimate at t = {t}"
        )));
    }
    Ok((x_new, k7, err))
}

fn step_factor(err: f64, max: f64) -> f64 {
    if err == 0.0 {
        max
    } else {
        (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, max)
    }
}

/// Adaptive Dormand-Prince solution of `ẋ = f(t, x)` on `[t0, t_end]`,
/// returning every accepted sample including the initial one.
pub fn solve_ode_adaptive<F>(
    f: F,
    t0: f64,
    x0: &Vector,
    t_end: f64,
    rtol: f64,
    atol: f64,
    max_steps: usize,
) -> Result<(Vec<f64>, Vec<Vector>)>
where
    F: Fn(f64, &Vector) -> Result<Vector>,
{
    let mut times = vec![t0];
    let mut states = vec![x0.clone()];
    if t_end <= t0 {
        return Ok((times, states));
    }
    let mut t = t0;
    let mut x = x0.clone();
    let mut k1 = f(t, &x)?;
    let mut h = ((t_end - t0) * 1e-3).max(1e-6).min(t_end - t0);
    let mut rejected_last = false;
    while t < t_end {
        if times.len() > max_steps {
            return Err(DsmError::SolverFailure(format!(
                "step limit {max_steps} reached at t = {t}"
            )));
        }
        let remaining = t_end - t;
        let last = h >= remaining * (1.0 - 1e-12);
        if last {
            h = remaining;
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(DsmError::Stiffness { t, h });
        }
        let (x_new, k7, err) = dp45_attempt(&f, t, &x, &k1, h, rtol, atol)?;
        if err <= 1.0 {
            t = if last { t_end } else { t + h };
            x = x_new;
            k1 = k7;
            times.push(t);
            states.push(x.clone());
            h *= step_factor(err, if rejected_last { 1.0 } else { MAX_FACTOR });
            rejected_last = false;
        } else {
            h *= step_factor(err, 1.0);
            rejected_last = true;
        }
    }
    Ok((times, states))
}

/// Classical RK4 with `n` equal steps on `[t0, t_end]`.
pub fn solve_ode_rk4<F>(
    f: F,
    t0: f64,
    x0: &Vector,
    t_end: f64,
    n: usize,
) -> Result<(Vec<f64>, Vec<Vector>)>
where
    F: Fn(f64, &Vector) -> Result<Vector>,
{
    let n = n.max(1);
    let h = (t_end - t0) / n as f64;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    let mut x = x0.clone();
    times.push(t0);
    states.push(x.clone());
    for k in 0..n {
        let t = t0 + k as f64 * h;
        let k1 = f(t, &x)?;
        let k2 = f(t + 0.5 * h, &(&x + &k1 * (0.5 * h)))?;
        let k3 = f(t + 0.5 * h, &(&x + &k2 * (0.5 * h)))?;
        let k4 = f(t + h, &(&x + &k3 * h))?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        times.push(if k + 1 == n {
            t_end
        } else {
            t0 + (k + 1) as f64 * h
        });
        states.push(x.clone());
    }
    Ok((times, states))
}

/// Integrates the coupled flow from `(u0, Q0)`.
pub fn integrate_coupled(
    phi: &PhiField,
    u0: &Vector,
    q0: &Matrix,
    spec: &StepperSpec,
) -> RunResult {
    if !phi.is_coupled() {
        return Err(bare(DsmError::Usage(
            "integrate_coupled needs the coupled field".into(),
        )));
    }
    let x0 = CoupledState::new(u0.clone(), q0.clone())
        .map_err(bare)?
        .pack();
    integrate(phi, &x0, spec, None)
}

/// The explicit recurrence `u_{n+1} = u_n + h Φ(u_n)`, `t_n = n h`, for an
/// autonomous field.
pub fn iterate_fixed(
    phi: &PhiField,
    u0: &Vector,
    h: f64,
    n_max: usize,
    stop: Option<&StopCondition>,
) -> RunResult {
    if !phi.is_autonomous() {
        return Err(bare(DsmError::Usage(format!(
            "iterate_fixed needs an autonomous field; {} depends on t through its schedule",
            phi.method().tag()
        ))));
    }
    if !(h > 0.0) {
        return Err(bare(DsmError::Usage(format!(
            "step h must be positive, got {h}"
        ))));
    }
    check_dim(phi.state_dim(), u0.len()).map_err(bare)?;
    if let Some(rule) = stop {
        rule.validate().map_err(bare)?;
        if rule.kind.is_time_rule() {
            return Err(bare(DsmError::Usage(
                "iterate_fixed accepts only in-run stop rules".into(),
            )));
        }
    }
    let mut rec = Recorder::new(phi);
    let body = |rec: &mut Recorder<'_>| -> Result<StopReason> {
        let mut u = u0.clone();
        let res = rec.record(0.0, &u)?;
        if stop.is_some_and(|r| r.fires(res)) {
            return Ok(StopReason::Condition);
        }
        for k in 0..n_max {
            u = euler_step(phi, k as f64 * h, &u, h)?;
            let res = rec.record((k + 1) as f64 * h, &u)?;
            if stop.is_some_and(|r| r.fires(res)) {
                return Ok(StopReason::Condition);
            }
        }
        Ok(StopReason::MaxSteps)
    };
    match body(&mut rec) {
        Ok(reason) => Ok(rec.finish(reason)),
        Err(e) => Err(rec.fail(e)),
    }
}

/// Newton's method `u_{n+1} = u_n - F'(u_n)⁻¹F(u_n)`. Stops when
/// `‖F(u_n)‖ ≤ tol` or the step is below `tol (1 + ‖u_n‖)`.
pub fn discrete_newton(p: &OperatorProblem, u0: &Vector, n_max: usize, tol: f64) -> RunResult {
    check_dim(p.dim(), u0.len()).map_err(bare)?;
    let mut log = TrajectoryLog {
        method: "discrete_newton".into(),
        ..Default::default()
    };
    let y = p.y_known.as_ref();
    let push = |log: &mut TrajectoryLog, n: usize, u: &Vector, res: f64| {
        log.times.push(n as f64);
        log.states.push(u.clone());
        log.residual_norms.push(res);
        log.eps_values.push(None);
        log.error_norms.push(y.map(|y| (u - y).norm()));
        log.lambda_defects.push(None);
    };
    let mut u = u0.clone();
    let fail = |mut log: TrajectoryLog, error: DsmError| {
        log.stop_reason = Some(StopReason::Error(error.to_string()));
        IntegrateError {
            error,
            partial: Box::new(log),
        }
    };
    for n in 0..=n_max {
        let f = match p.residual(&u) {
            Ok(f) => f,
            Err(e) => return Err(fail(log, e)),
        };
        let res = f.norm();
        push(&mut log, n, &u, res);
        if res <= tol {
            log.stop_reason = Some(StopReason::Converged);
            return Ok(log);
        }
        if n == n_max {
            break;
        }
        let a = p.op.jacobian(&u);
        log.linear_solves += 1;
        log.field_evals += 1;
        let step = match lu_solve(&a, &f) {
            Ok(s) => s,
            Err(e) => {
                let error = DsmError::Singular {
                    t: n as f64,
                    state: u.iter().copied().collect(),
                    reason: e.to_string(),
                };
                return Err(fail(log, error));
            }
        };
        let small = step.norm() <= tol * (1.0 + u.norm());
        u -= step;
        if small {
            let res = p.residual(&u).map(|f| f.norm()).unwrap_or(f64::NAN);
            push(&mut log, n + 1, &u, res);
            log.stop_reason = Some(StopReason::Converged);
            return Ok(log);
        }
    }
    log.stop_reason = Some(StopReason::MaxSteps);
    Ok(log)
}

/// The largest step found to give geometric decay of `‖F(u_n)‖` under
/// [`iterate_fixed`], with the fitted per-step ratio and the rate `c` such
/// that `ratio = e^{-c h}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepProbe {
    pub h: f64,
    pub ratio: f64,
    pub rate: f64,
}

/// Least-squares slope of `ln r_k` against `k`, exponentiated.
pub fn fitted_ratio(residuals: &[f64]) -> f64 {
    let n = residuals.len() as f64;
    let mean_k = (n - 1.0) / 2.0;
    let mean_y = residuals.iter().map(|r| r.ln()).sum::<f64>() / n;
    let (mut cov, mut var) = (0.0, 0.0);
    for (k, r) in residuals.iter().enumerate() {
        let dk = k as f64 - mean_k;
        cov += dk * (r.ln() - mean_y);
        var += dk * dk;
    }
    (cov / var).exp()
}

/// Tries `candidates` from the largest down and returns the first step for
/// which `n_steps` fixed iterations decrease the residual strictly at every
/// step above the rounding floor, with fitted ratio below 1. `None` when no
/// candidate decays.
pub fn largest_decaying_step(
    phi: &PhiField,
    u0: &Vector,
    candidates: &[f64],
    n_steps: usize,
) -> Result<Option<StepProbe>> {
    let mut hs: Vec<f64> = candidates.to_vec();
    hs.sort_by(|a, b| b.total_cmp(a));
    for h in hs {
        let log = match iterate_fixed(phi, u0, h, n_steps, None) {
            Ok(log) => log,
            Err(e) if matches!(e.error, DsmError::Usage(_)) => return Err(e.error),
            Err(e) => {
                log::debug!("step {h} failed: {}", e.error);
                continue;
            }
        };
        let r = &log.residual_norms;
        let floor = 1e3 * f64::EPSILON * r[0].max(1.0);
        let above: Vec<f64> = r.iter().copied().take_while(|&x| x > floor).collect();
        let (monotone, ratio) = match above.len() {
            0 => continue,
            // Reached the floor in one step.
            1 if r.len() > 1 => (true, r[1] / r[0]),
            1 => continue,
            _ => (above.windows(2).all(|w| w[1] < w[0]), fitted_ratio(&above)),
        };
        if monotone && ratio < 1.0 {
            return Ok(Some(StepProbe {
                h,
                ratio,
                rate: -ratio.ln() / h,
            }));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{
        make_coupled_phi, make_linear_phi, make_wellposed_phi, LinearVariant, Method,
    };
    use crate::operator::FnOperator;
    use crate::schedule::EpsilonSchedule;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn v(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    #[test]
    fn largest_decaying_newton_step() {
        // Fixed Newton steps on a linear map contract by |1 - h|.
        let p = lin(2.0, 1.0);
        let phi = make_wellposed_phi(&p, Method::Newton).unwrap();
        let probe = largest_decaying_step(&phi, &v(3.0), &[0.5, 2.5, 1.5, 2.0], 20)
            .unwrap()
            .unwrap();
        assert_eq!(probe.h, 1.5);
        assert_relative_eq!(probe.ratio, 0.5, max_relative = 1e-9);
        assert!(largest_decaying_step(&phi, &v(3.0), &[2.0, 3.0], 20)
            .unwrap()
            .is_none());
        let exact = largest_decaying_step(&phi, &v(3.0), &[1.0], 20)
            .unwrap()
            .unwrap();
        assert!(exact.ratio < 1e-12);
    }

    #[test]
    fn fitted_ratio_of_geometric_sequence() {
        let r: Vec<f64> = (0..10).map(|k| 0.3f64.powi(k)).collect();
        assert_relative_eq!(fitted_ratio(&r), 0.3, max_relative = 1e-12);
    }

    fn lin(a: f64, f: f64) -> OperatorProblem {
        let mut p = OperatorProblem::linear("l", Matrix::from_element(1, 1, a), v(f)).unwrap();
        p.radius = 100.0;
        p
    }

    #[test]
    fn rk4_exponential() {
        let p = lin(1.0, 0.0);
        let phi = make_wellposed_phi(&p, Method::Simple).unwrap();
        let spec = StepperSpec::fixed(StepperKind::Rk4, 0.01, 1.0);
        let log = integrate(&phi, &v(1.0), &spec, None).unwrap();
        assert_eq!(log.final_time(), Some(1.0));
        assert!((log.final_state().unwrap()[0] - (-1f64).exp()).abs() < 1e-8);
        assert_eq!(log.len(), 101);
    }

    #[test]
    fn adaptive_exponential_and_landing() {
        let p = lin(1.0, 0.0);
        let phi = make_wellposed_phi(&p, Method::Simple).unwrap();
        let log = integrate(
            &phi,
            &v(1.0),
            &StepperSpec::adaptive(1e-10, 1e-12, 3.0),
            None,
        )
        .unwrap();
        assert_eq!(log.final_time(), Some(3.0));
        assert_relative_eq!(
            log.final_state().unwrap()[0],
            (-3f64).exp(),
            max_relative = 1e-8
        );
        assert!(log.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn equilibrium_is_constant() {
        let p = lin(2.0, 4.0);
        let phi = make_wellposed_phi(&p, Method::Newton).unwrap();
        for kind in StepperKind::ALL {
            let log = integrate(&phi, &v(2.0), &StepperSpec::fixed(kind, 0.1, 2.0), None).unwrap();
            assert!(log.states.iter().all(|s| s[0] == 2.0), "{}", kind.tag());
        }
    }

    #[test]
    fn preconditioned_scalar_limit() {
        let r2 = 2f64.sqrt();
        let p = lin(r2, r2);
        let phi = make_linear_phi(
            &p,
            LinearVariant::Preconditioned,
            EpsilonSchedule::constant(1.0).unwrap(),
            None,
        )
        .unwrap();
        let log = integrate(
            &phi,
            &v(0.0),
            &StepperSpec::adaptive(1e-10, 1e-12, 40.0),
            None,
        )
        .unwrap();
        assert_relative_eq!(log.final_state().unwrap()[0], 2.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn coupled_scalar_q() {
        let p = lin(1.0, 0.0);
        let (phi, _) = make_coupled_phi(&p, Matrix::zeros(1, 1)).unwrap();
        let spec = StepperSpec::fixed(StepperKind::Rk4, 0.001, 1.0);
        let log = integrate_coupled(&phi, &v(1.0), &Matrix::zeros(1, 1), &spec).unwrap();
        let q1 = log.final_state().unwrap()[1];
        assert!((q1 - (1.0 - (-1f64).exp())).abs() < 1e-8);
        assert_eq!(log.linear_solves, 0);
    }

    #[test]
    fn coupled_invariant_manifold() {
        let p = lin(1.0, 0.0);
        let (phi, _) = make_coupled_phi(&p, Matrix::identity(1, 1)).unwrap();
        let spec = StepperSpec::fixed(StepperKind::Rk4, 0.01, 2.0);
        let log = integrate_coupled(&phi, &v(1.0), &Matrix::identity(1, 1), &spec).unwrap();
        for (t, s) in log.times.iter().zip(&log.states) {
            assert_eq!(s[1], 1.0);
            assert!((s[0] - (-t).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn iterate_fixed_geometric() {
        let p = lin(1.0, 0.0);
        let phi = make_wellposed_phi(&p, Method::Simple).unwrap();
        let log = iterate_fixed(&phi, &v(1.0), 0.1, 2, None).unwrap();
        assert_relative_eq!(log.states[1][0], 0.9, epsilon = 1e-15);
        assert_relative_eq!(log.states[2][0], 0.81, epsilon = 1e-15);
    }

    #[test]
    fn iterate_fixed_matches_euler_bitwise() {
        let op = FnOperator::componentwise(2, |x| x + 0.3 * x.sin(), |x| 1.0 + 0.3 * x.cos());
        let mut p =
            OperatorProblem::new("s", Arc::new(op), Vector::from_vec(vec![0.4, -0.2])).unwrap();
        p.radius = 10.0;
        let phi = make_wellposed_phi(&p, Method::Newton).unwrap();
        let u0 = Vector::from_vec(vec![1.0, 1.0]);
        let a = iterate_fixed(&phi, &u0, 0.05, 40, None).unwrap();
        let b = integrate(
            &phi,
            &u0,
            &StepperSpec::fixed(StepperKind::Euler, 0.05, 2.0),
            None,
        )
        .unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.times, b.times);
    }

    #[test]
    fn iterate_fixed_newton_one_step() {
        let op = FnOperator::componentwise(1, |x| x * x * x, |x| 3.0 * x * x);
        let mut p = OperatorProblem::new("c", Arc::new(op), v(8.0)).unwrap();
        p.radius = 100.0;
        let phi = make_wellposed_phi(&p, Method::Newton).unwrap();
        let log = iterate_fixed(&phi, &v(3.0), 1.0, 1, None).unwrap();
        assert_relative_eq!(log.states[1][0], 62.0 / 27.0, epsilon = 1e-14);
    }

    #[test]
    fn iterate_fixed_rejects_time_dependent_field() {
        let p = lin(1.0, 1.0);
        let s = EpsilonSchedule::power(1.0, 1.0, 0.5).unwrap();
        let phi = make_linear_phi(&p, LinearVariant::Plain, s, None).unwrap();
        assert!(iterate_fixed(&phi, &v(0.0), 0.1, 3, None).is_err());
    }

    #[test]
    fn discrete_newton_examples() {
        let op = FnOperator::componentwise(1, |x| x * x, |x| 2.0 * x);
        let p = OperatorProblem::new("q", Arc::new(op), v(4.0)).unwrap();
        let log = discrete_newton(&p, &v(3.0), 2, 0.0).unwrap();
        assert_relative_eq!(log.states[1][0], 13.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(log.states[2][0], 313.0 / 156.0, epsilon = 1e-15);

        let log = discrete_newton(&p, &v(2.0), 5, 1e-14).unwrap();
        assert!(log.states.iter().all(|s| s[0] == 2.0));

        let l = OperatorProblem::linear(
            "l",
            Matrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]),
            Vector::from_vec(vec![1.0, 2.0]),
        )
        .unwrap();
        let log = discrete_newton(&l, &Vector::from_vec(vec![5.0, -7.0]), 5, 1e-13).unwrap();
        assert!(log.residual_norms[1] < 1e-13);
    }

    #[test]
    fn time_rule_shortens_horizon() {
        let r2 = 2f64.sqrt();
        let p = lin(r2, r2);
        let s = EpsilonSchedule::power(1.0, 1.0, 0.5).unwrap();
        let phi = make_linear_phi(&p, LinearVariant::Preconditioned, s, None).unwrap();
        let rule = StopCondition::eps_power(1e-2, 0.5);
        let log = integrate(
            &phi,
            &v(0.0),
            &StepperSpec::adaptive(1e-8, 1e-10, 1000.0),
            Some(&rule),
        )
        .unwrap();
        assert_relative_eq!(log.final_time().unwrap(), 99.0, max_relative = 1e-12);
        assert_eq!(log.stop_reason, Some(StopReason::StoppingTime));
    }

    #[test]
    fn condition_fires_immediately() {
        let p = lin(1.0, 1.0);
        let phi = make_wellposed_phi(&p, Method::Simple).unwrap();
        let rule = StopCondition::discrepancy(1e-3, 1e6);
        let log = integrate(&phi, &v(0.0), &StepperSpec::default(), Some(&rule)).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log.stop_reason, Some(StopReason::Condition));
    }

    #[test]
    fn singular_run_keeps_partial_log() {
        let op = FnOperator::componentwise(1, |x| x * x, |x| 2.0 * x);
        let mut p = OperatorProblem::new("q", Arc::new(op), v(-1.0)).unwrap();
        p.radius = 100.0;
        let phi = make_wellposed_phi(&p, Method::Newton).unwrap();
        // F'(0) = 0, so the first field evaluation fails after the initial sample.
        let err = integrate(
            &phi,
            &v(0.0),
            &StepperSpec::fixed(StepperKind::Euler, 0.1, 10.0),
            None,
        );
        let err = match err {
            Err(e) => e,
            Ok(log) => panic!("expected failure, final state {:?}", log.final_state()),
        };
        assert_eq!(err.partial.len(), 1);
        assert!(matches!(err.error, DsmError::Singular { .. }));
    }

    #[test]
    fn csv_layout() {
        let p = lin(1.0, 0.0);
        let phi = make_wellposed_phi(&p, Method::Simple).unwrap();
        let log = integrate(
            &phi,
            &v(1.0),
            &StepperSpec::fixed(StepperKind::Euler, 0.5, 1.0),
            None,
        )
        .unwrap();
        let csv = log.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,res_norm,eps,err_norm");
        assert_eq!(lines[1], "0e0,1e0,,");
        assert_eq!(lines.len(), 4);
    }
}
