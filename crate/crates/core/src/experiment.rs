//! Experiment configurations: problem, method, schedule, stepper and stop
//! rule in one JSON document, plus noise sweeps and certificate checks.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::certificate::{
    example_certificate, gronwall_compare, riccati_compare, theorem42_riccati,
    wellposed_certificate, BoundReport, GronwallData, RiccatiData, WellPosedCert,
};
use crate::error::{check_dim, DsmError, Result};
use crate::field::{make_wellposed_phi, CoupledState, Method, PhiField};
use crate::integrate::{integrate, IntegrateError, StepperSpec, TrajectoryLog};
use crate::linalg::{lu_solve, min_symmetric_eigenvalue, spectral_norm, Matrix, Vector};
use crate::operator::{NoisyProblem, OperatorProblem};
use crate::sampling::rng_for;
use crate::scalar_fn::ScalarFn;
use crate::schedule::{theorem42_schedule, theorem42_schedule_with_c0, EpsilonSchedule};
use crate::stopping::{stopping_time, StopCondition, StopKind};
use crate::zoo::{add_noise_stream, from_name, STREAM_NOISE};

const STREAM_Q0: u64 = 4;

/// Schedule as written in a config; `theorem42` takes `M` and `r` from the problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Power {
        c1: f64,
        c0: f64,
        b: f64,
    },
    /// Power schedule given by `ε(0)`.
    PowerFromInitial {
        eps0: f64,
        c0: f64,
        b: f64,
    },
    Constant {
        eps: f64,
    },
    Theorem42 {
        b: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c0: Option<f64>,
    },
}

/// Initial approximate inverse for the coupled flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Q0Spec {
    Zero,
    /// `F'(y)⁻¹` (or `F'(u0)⁻¹` without a known solution) plus a seeded random
    /// perturbation of relative spectral size `perturbation`.
    Inverse {
        #[serde(default)]
        perturbation: f64,
    },
    Matrix {
        rows: Vec<Vec<f64>>,
    },
}

fn default_output() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Zoo name, e.g. `hilbert:6`.
    pub problem: String,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleSpec>,
    #[serde(default)]
    pub stepper: StepperSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<StopCondition>,
    #[serde(default = "default_output")]
    pub output: String,
    #[serde(default)]
    pub seed: u64,
    /// Noise level `δ` added to the data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_tilde0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q0: Option<Q0Spec>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn new(problem: impl Into<String>, method: Method) -> Self {
        Self {
            problem: problem.into(),
            method,
            schedule: None,
            stepper: StepperSpec::default(),
            stop: None,
            output: default_output(),
            seed: 0,
            noise: None,
            u0: None,
            u_tilde0: None,
            q0: None,
        }
    }
}

/// A configuration resolved into concrete objects.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub problem: OperatorProblem,
    pub noisy: Option<NoisyProblem>,
    pub schedule: Option<EpsilonSchedule>,
    pub stop: Option<StopCondition>,
    pub phi: PhiField,
    pub x0: Vector,
}

fn vector_from(name: &str, v: &[f64], n: usize) -> Result<Vector> {
    check_dim(n, v.len())
        .map_err(|_| DsmError::Usage(format!("{name} has length {}, expected {n}", v.len())))?;
    Ok(Vector::from_column_slice(v))
}

fn resolve_schedule(
    spec: &ScheduleSpec,
    p: &OperatorProblem,
    u_tilde0: &Vector,
) -> Result<EpsilonSchedule> {
    match *spec {
        ScheduleSpec::Power { c1, c0, b } => EpsilonSchedule::power(c1, c0, b),
        ScheduleSpec::PowerFromInitial { eps0, c0, b } => {
            EpsilonSchedule::power_from_initial(eps0, c0, b)
        }
        ScheduleSpec::Constant { eps } => EpsilonSchedule::constant(eps),
        ScheduleSpec::Theorem42 { b, c0 } => {
            let m = p.bounds.m2;
            let r = match (p.notes.get("r").and_then(Value::as_f64), &p.y_known) {
                (Some(r), _) => r,
                (None, Some(y)) => (y - u_tilde0).norm(),
                (None, None) => {
                    return Err(DsmError::Usage(format!(
                        "{}: theorem42 schedule needs a solution radius r",
                        p.name
                    )))
                }
            };
            match c0 {
                Some(c0) => theorem42_schedule_with_c0(m, r, b, c0),
                None => theorem42_schedule(m, r, b),
            }
        }
    }
}

/// `F'(y)⁻¹`, or `F'(u0)⁻¹` without a known solution.
pub fn reference_inverse(p: &OperatorProblem) -> Result<Matrix> {
    let at = p.y_known.as_ref().unwrap_or(&p.u0);
    let a = p.jacobian(at)?;
    let n = p.dim();
    let cols: Result<Vec<Vector>> = (0..n)
        .map(|j| lu_solve(&a, &Vector::from_fn(n, |i, _| f64::from(i == j))))
        .collect();
    Ok(Matrix::from_columns(&cols?))
}

fn resolve_q0(spec: &Q0Spec, p: &OperatorProblem, seed: u64) -> Result<Matrix> {
    let n = p.dim();
    match spec {
        Q0Spec::Zero => Ok(Matrix::zeros(n, n)),
        Q0Spec::Inverse { perturbation } => {
            let inv = reference_inverse(p)?;
            if *perturbation == 0.0 {
                return Ok(inv);
            }
            let mut rng = rng_for(seed, STREAM_Q0);
            let e = Matrix::from_fn(n, n, |_, _| {
                rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
            });
            let scale = perturbation * spectral_norm(&inv) / spectral_norm(&e);
            Ok(inv + e * scale)
        }
        Q0Spec::Matrix { rows } => {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(DsmError::Usage(format!("q0 must be a {n} x {n} matrix")));
            }
            Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
        }
    }
}

/// Fills rule fields the config leaves implicit: `δ` from the noise level and
/// `M` from the problem's derivative Lipschitz bound.
fn resolve_stop(
    stop: &StopCondition,
    p: &OperatorProblem,
    noise: Option<f64>,
) -> Result<StopCondition> {
    let mut s = *stop;
    if let (Some(d), true) = (noise, s.delta == 0.0) {
        s.delta = d;
    }
    if s.kind == StopKind::TimeRootEpsSq16M && s.m.is_none() {
        if !(p.bounds.m2 > 0.0) {
            return Err(DsmError::Usage(format!(
                "{}: rule needs M but the problem has M2 = 0",
                p.name
            )));
        }
        s.m = Some(p.bounds.m2);
    }
    s.validate()?;
    Ok(s)
}

/// Builds everything a run needs. Configuration problems are
/// [`DsmError::Usage`]; failures of the math (for instance a singular
/// derivative at the start) keep their own variants.
pub fn build_experiment(config: &ExperimentConfig) -> Result<Experiment> {
    build_with_noise(config, config.noise, STREAM_NOISE)
}

fn build_with_noise(
    config: &ExperimentConfig,
    noise: Option<f64>,
    stream: u64,
) -> Result<Experiment> {
    config.stepper.validate()?;
    let mut problem = from_name(&config.problem)?;
    let n = problem.dim();
    if let Some(u0) = &config.u0 {
        problem.u0 = vector_from("u0", u0, n)?;
    }
    let u_tilde0 = match &config.u_tilde0 {
        Some(v) => Some(vector_from("u_tilde0", v, n)?),
        None => None,
    };
    let ut0 = u_tilde0.clone().unwrap_or_else(|| Vector::zeros(n));
    let schedule = match (&config.schedule, config.method.needs_schedule()) {
        (Some(s), _) => Some(resolve_schedule(s, &problem, &ut0)?),
        (None, true) => {
            return Err(DsmError::Usage(format!(
                "method {} needs a schedule",
                config.method.tag()
            )));
        }
        (None, false) => None,
    };
    let noisy = match noise {
        Some(d) => Some(add_noise_stream(&problem, d, config.seed, stream)?),
        None => None,
    };
    let stop = match &config.stop {
        Some(s) => Some(resolve_stop(s, &problem, noise)?),
        None => None,
    };
    if config.q0.is_some() && config.method != Method::CoupledInversionFree {
        return Err(DsmError::Usage(
            "q0 applies only to the coupled_inversion_free method".into(),
        ));
    }
    let phi = PhiField::from_method(&problem, config.method, schedule, u_tilde0, noisy.as_ref())?;
    let x0 = if phi.is_coupled() {
        let q0 = resolve_q0(
            config.q0.as_ref().unwrap_or(&Q0Spec::Zero),
            &problem,
            config.seed,
        )?;
        CoupledState::new(problem.u0.clone(), q0)?.pack()
    } else {
        problem.u0.clone()
    };
    Ok(Experiment {
        config: config.clone(),
        problem,
        noisy,
        schedule,
        stop,
        phi,
        x0,
    })
}

/// A finished or failed run with everything needed for its artifacts.
pub struct RunOutcome {
    pub log: TrajectoryLog,
    pub error: Option<DsmError>,
    pub metadata: Value,
}

impl Experiment {
    pub fn run(&self) -> RunOutcome {
        let (log, error) = match integrate(
            &self.phi,
            &self.x0,
            &self.config.stepper,
            self.stop.as_ref(),
        ) {
            Ok(log) => (log, None),
            Err(IntegrateError { error, partial }) => (*partial, Some(error)),
        };
        let metadata = json!({
            "config": self.config,
            "resolved": {
                "schedule": self.schedule,
                "stop": self.stop,
                "u0": self.problem.u0.as_slice(),
                "noise": self.noisy.as_ref().map(|np| np.delta),
                "radius": self.problem.radius,
                "bounds": self.problem.bounds,
            },
            "seed": self.config.seed,
            "run": log.summary(),
            "error": error.as_ref().map(|e| e.to_string()),
        });
        RunOutcome {
            log,
            error,
            metadata,
        }
    }
}

/// Builds and runs a configuration.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome> {
    Ok(build_experiment(config)?.run())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub delta: f64,
    /// `+∞` for exact data; the run then ends at `t_max`.
    pub t_delta: f64,
    pub t_end: f64,
    pub err: f64,
}

/// Noise stream for one sweep level; depends only on `δ`, not on list order.
pub fn sweep_stream(delta: f64) -> u64 {
    STREAM_NOISE.wrapping_add(delta.to_bits())
}

/// One row of a noise sweep: perturb the data by `δ`, integrate to the rule's
/// stopping time and measure the distance to the solution.
pub fn sweep_point(config: &ExperimentConfig, delta: f64) -> Result<SweepRow> {
    let stop = config
        .stop
        .ok_or_else(|| DsmError::Usage("sweep-delta needs a stop rule".into()))?;
    let mut cfg = config.clone();
    cfg.stop = Some(stop.with_delta(delta));
    let mut exp = build_with_noise(&cfg, Some(delta), sweep_stream(delta))?;
    let y = exp.problem.y_known.clone().ok_or_else(|| {
        DsmError::Usage(format!(
            "{}: sweep needs a known solution",
            exp.problem.name
        ))
    })?;
    let t_delta = match exp.stop {
        Some(rule) if rule.kind.is_time_rule() => {
            let s = exp
                .schedule
                .as_ref()
                .ok_or_else(|| DsmError::Usage("time rules need a schedule".into()))?;
            let td = stopping_time(&rule, s)?;
            if td.is_finite() {
                // The rule, not t_max, decides where a sweep run ends.
                exp.config.stepper.t_max = td.max(f64::MIN_POSITIVE);
            }
            td
        }
        _ => f64::NAN,
    };
    let log = integrate(&exp.phi, &exp.x0, &exp.config.stepper, exp.stop.as_ref())
        .map_err(|e| e.error)?;
    let t_end = log.final_time().unwrap_or(0.0);
    let u = exp
        .phi
        .u_of(log.final_state().expect("log has the initial sample"))
        .into_owned();
    Ok(SweepRow {
        delta,
        t_delta: if t_delta.is_nan() { t_end } else { t_delta },
        t_end,
        err: (u - y).norm(),
    })
}

/// [`sweep_point`] for each level, sequentially.
pub fn sweep_delta(config: &ExperimentConfig, deltas: &[f64]) -> Result<Vec<SweepRow>> {
    deltas.iter().map(|&d| sweep_point(config, d)).collect()
}

/// `delta,t_delta,err` with `inf` for exact data.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("delta,t_delta,err\n");
    for r in rows {
        out.push_str(&format!("{:e},{:e},{:e}\n", r.delta, r.t_delta, r.err));
    }
    out
}

/// Certificate selection for `certify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CertificateSpec {
    /// Constant-coefficient Riccati inequality.
    Riccati {
        gamma: f64,
        sigma: f64,
        beta: f64,
        mu: f64,
        g0: f64,
    },
    /// The instance for the regularized Newton flow, with the matching schedule.
    Theorem42 {
        #[serde(rename = "M")]
        m: f64,
        r: f64,
        b: f64,
        g0: f64,
    },
    /// Constant `T`, `G` and `Q0`; `ε` defaults to `λ_min(sym T)`.
    Gronwall {
        #[serde(rename = "T")]
        t: Vec<Vec<f64>>,
        #[serde(rename = "G")]
        g: Vec<Vec<f64>>,
        #[serde(rename = "Q0")]
        q0: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eps: Option<f64>,
    },
    /// Reachability with constant `g1`, `g2`.
    Wellposed {
        a: f64,
        g1: f64,
        g2: f64,
        #[serde(rename = "F0_norm")]
        f0_norm: f64,
        #[serde(rename = "R")]
        radius: f64,
    },
    /// Example certificate for a well-posed flow on a zoo problem, compared
    /// against the integrated flow.
    WellposedFlow { problem: String, method: Method },
}

fn default_t_max() -> f64 {
    20.0
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    pub certificate: CertificateSpec,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    /// Multiplies the bound before comparison; values below 1 tamper with it.
    #[serde(default = "default_scale")]
    pub bound_scale: f64,
    #[serde(default = "default_output")]
    pub output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertifyStatus {
    Holds,
    Inapplicable,
    Violated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertifyOutcome {
    pub status: CertifyStatus,
    pub conditions_ok: bool,
    pub max_slack: Option<f64>,
    pub first_violation_t: Option<f64>,
    pub detail: Value,
}

fn matrix_from(name: &str, rows: &[Vec<f64>]) -> Result<Matrix> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(DsmError::Usage(format!(
            "{name} must be a nonempty square matrix"
        )));
    }
    Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn from_report(r: BoundReport) -> CertifyOutcome {
    let status = if !r.conditions_ok {
        CertifyStatus::Inapplicable
    } else if r.violated() {
        CertifyStatus::Violated
    } else {
        CertifyStatus::Holds
    };
    CertifyOutcome {
        status,
        conditions_ok: r.conditions_ok,
        max_slack: r.max_slack.is_finite().then_some(r.max_slack),
        first_violation_t: r.first_violation_t,
        detail: json!(r),
    }
}

pub fn certify(cfg: &CertifyConfig) -> Result<CertifyOutcome> {
    if !(cfg.t_max > 0.0) || !(cfg.bound_scale > 0.0) {
        return Err(DsmError::Usage(
            "t_max and bound_scale must be positive".into(),
        ));
    }
    match &cfg.certificate {
        CertificateSpec::Riccati {
            gamma,
            sigma,
            beta,
            mu,
            g0,
        } => {
            let d = RiccatiData::constant(*gamma, *sigma, *beta, *mu, *g0);
            Ok(from_report(riccati_compare(&d, cfg.t_max, cfg.bound_scale)))
        }
        CertificateSpec::Theorem42 { m, r, b, g0 } => {
            let s = theorem42_schedule(*m, *r, *b)?;
            let d = theorem42_riccati(*m, *r, s, *g0);
            let mut out = from_report(riccati_compare(&d, cfg.t_max, cfg.bound_scale));
            out.detail["schedule"] = json!(s);
            Ok(out)
        }
        CertificateSpec::Gronwall { t, g, q0, eps } => {
            let (tm, gm, q0m) = (
                matrix_from("T", t)?,
                matrix_from("G", g)?,
                matrix_from("Q0", q0)?,
            );
            if tm.nrows() != gm.nrows() || tm.nrows() != q0m.nrows() {
                return Err(DsmError::Usage(
                    "T, G and Q0 must have the same size".into(),
                ));
            }
            let e = eps.unwrap_or_else(|| min_symmetric_eigenvalue(&tm));
            let d = GronwallData::new(
                move |_| tm.clone(),
                move |_| gm.clone(),
                q0m,
                ScalarFn::Constant(e),
            );
            Ok(from_report(gronwall_compare(
                &d,
                cfg.t_max,
                2000,
                cfg.bound_scale,
            )))
        }
        CertificateSpec::Wellposed {
            a,
            g1,
            g2,
            f0_norm,
            radius,
        } => {
            let c = WellPosedCert::constant(*a, *g1, *g2, *f0_norm, *radius);
            Ok(match wellposed_certificate(&c) {
                Ok(rep) => CertifyOutcome {
                    status: CertifyStatus::Holds,
                    conditions_ok: rep.reachable,
                    max_slack: Some(rep.path_length_bound - rep.radius),
                    first_violation_t: None,
                    detail: json!(rep),
                },
                Err(DsmError::Inapplicable(why)) => CertifyOutcome {
                    status: CertifyStatus::Inapplicable,
                    conditions_ok: false,
                    max_slack: None,
                    first_violation_t: None,
                    detail: json!({ "inapplicable": why }),
                },
                Err(e) => return Err(e),
            })
        }
        CertificateSpec::WellposedFlow { problem, method } => wellposed_flow(problem, *method, cfg),
    }
}

fn wellposed_flow(name: &str, method: Method, cfg: &CertifyConfig) -> Result<CertifyOutcome> {
    let p = from_name(name)?;
    let y = p
        .y_known
        .clone()
        .ok_or_else(|| DsmError::Usage(format!("{name}: needs a known solution")))?;
    let cert = example_certificate(&p, method)?;
    let rep = wellposed_certificate(&cert)?;
    if !rep.reachable {
        return Ok(CertifyOutcome {
            status: CertifyStatus::Inapplicable,
            conditions_ok: false,
            max_slack: None,
            first_violation_t: None,
            detail: json!({ "certificate": rep }),
        });
    }
    let phi = make_wellposed_phi(&p, method)?;
    let log = integrate(
        &phi,
        &p.u0,
        &StepperSpec::adaptive(1e-10, 1e-12, cfg.t_max),
        None,
    )
    .map_err(|e| e.error)?;
    let mut pairs = Vec::with_capacity(log.len());
    for (t, u) in log.times.iter().zip(&log.states) {
        pairs.push((*t, (u - &y).norm(), cfg.bound_scale * cert.error_bound(*t)?));
    }
    let mut out = from_report(BoundReport::from_samples(pairs));
    out.detail["certificate"] = json!(rep);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_unknown_fields() {
        let text = r#"{"problem":"hilbert:4","method":"linear_precond",
            "schedule":{"kind":"power_from_initial","eps0":1.0,"c0":0.01,"b":0.9},
            "stop":{"kind":"time_root_sqrt_eps","delta":1e-3}}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        let again = ExperimentConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again);
        assert!(ExperimentConfig::from_json(
            r#"{"problem":"hilbert:4","method":"newton","colour":1}"#
        )
        .is_err());
    }

    #[test]
    fn missing_schedule_is_usage_error() {
        let cfg = ExperimentConfig::new("hilbert:4", Method::LinearPrecond);
        assert!(matches!(build_experiment(&cfg), Err(DsmError::Usage(_))));
    }

    #[test]
    fn theorem42_schedule_uses_problem_constants() {
        let mut cfg = ExperimentConfig::new("monotone_cubic:3:1", Method::MonotoneRegNewton);
        cfg.schedule = Some(ScheduleSpec::Theorem42 { b: 0.5, c0: None });
        let exp = build_experiment(&cfg).unwrap();
        let r = exp.problem.notes["r"].as_f64().unwrap();
        let eps0 = exp.schedule.unwrap().at(0.0);
        assert!((eps0 - 4.0 * exp.problem.bounds.m2 * r).abs() <= 1e-12 * eps0);
    }

    #[test]
    fn wellposed_run_converges() {
        let mut cfg = ExperimentConfig::new("wellposed_smooth:5:2", Method::Newton);
        cfg.stepper.t_max = 25.0;
        let out = run_experiment(&cfg).unwrap();
        assert!(out.error.is_none());
        assert!(*out.log.residual_norms.last().unwrap() <= 1e-8);
    }

    #[test]
    fn sweep_rows_and_exact_data() {
        let mut cfg = ExperimentConfig::new("hilbert:4", Method::LinearPrecond);
        cfg.schedule = Some(ScheduleSpec::PowerFromInitial {
            eps0: 1.0,
            c0: 0.01,
            b: 0.9,
        });
        cfg.stop = Some(StopCondition::sqrt_eps(0.0, 0.5));
        cfg.stepper.t_max = 50.0;
        let rows = sweep_delta(&cfg, &[1e-2, 1e-3, 0.0]).unwrap();
        assert!(rows[0].t_delta < rows[1].t_delta);
        assert!(rows[2].t_delta.is_infinite());
        assert_eq!(rows[2].t_end, 50.0);
        assert!(sweep_csv(&rows).lines().nth(3).unwrap().contains(",inf,"));
        assert_eq!(rows, sweep_delta(&cfg, &[1e-2, 1e-3, 0.0]).unwrap());
    }

    #[test]
    fn certify_statuses() {
        let base = |c| CertifyConfig {
            certificate: c,
            t_max: 10.0,
            bound_scale: 1.0,
            output: "out".into(),
        };
        let ok = certify(&base(CertificateSpec::Theorem42 {
            m: 1.0,
            r: 1.0,
            b: 0.5,
            g0: 0.5,
        }))
        .unwrap();
        assert_eq!(ok.status, CertifyStatus::Holds);
        let gate = certify(&base(CertificateSpec::Riccati {
            gamma: 1.0,
            sigma: 0.0,
            beta: 0.0,
            mu: 1.0,
            g0: 2.0,
        }))
        .unwrap();
        assert_eq!(gate.status, CertifyStatus::Inapplicable);
        let mut tampered = base(CertificateSpec::Riccati {
            gamma: 1.0,
            sigma: 0.0,
            beta: 0.5,
            mu: 1.0,
            g0: 0.5,
        });
        tampered.bound_scale = 0.5;
        assert_eq!(certify(&tampered).unwrap().status, CertifyStatus::Violated);
        let flow = certify(&base(CertificateSpec::WellposedFlow {
            problem: "wellposed_smooth:4:0".into(),
            method: Method::Newton,
        }))
        .unwrap();
        assert_eq!(flow.status, CertifyStatus::Holds, "{:?}", flow.detail);
    }
}
