//! Stopping times for noisy data and in-run stop conditions.

use serde::{Deserialize, Serialize};

use crate::error::{DsmError, Result};
use crate::schedule::{EpsilonSchedule, DEFAULT_B};

/// Default discrepancy constant `C` in `‖B(u) - f_δ‖ ≤ C δ`.
pub const DEFAULT_DISCREPANCY_C: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    /// Stop when `ε(t) = δ^b`.
    TimeRootEpsPower,
    /// Stop when `2√ε(t) = δ^b`.
    TimeRootSqrtEps,
    /// Stop when `ε(t)² = 16 M δ`.
    #[serde(rename = "time_root_eps_sq_16M")]
    TimeRootEpsSq16M,
    /// Stop at the first `t` with `‖B(u(t)) - f_δ‖ ≤ C δ`.
    Discrepancy,
    /// Stop at the first `t` with `‖F(u(t))‖ ≤ threshold`.
    ResidualThreshold,
    /// Stop where `v(t) + δ/ε(t)` is minimal for the model `v = c ε^a`.
    Minimization,
}

impl StopKind {
    pub const ALL: [StopKind; 6] = [
        StopKind::TimeRootEpsPower,
        StopKind::TimeRootSqrtEps,
        StopKind::TimeRootEpsSq16M,
        StopKind::Discrepancy,
        StopKind::ResidualThreshold,
        StopKind::Minimization,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            StopKind::TimeRootEpsPower => "time_root_eps_power",
            StopKind::TimeRootSqrtEps => "time_root_sqrt_eps",
            StopKind::TimeRootEpsSq16M => "time_root_eps_sq_16M",
            StopKind::Discrepancy => "discrepancy",
            StopKind::ResidualThreshold => "residual_threshold",
            StopKind::Minimization => "minimization",
        }
    }

    /// Whether the rule fixes a stopping time in advance.
    pub fn is_time_rule(&self) -> bool {
        !matches!(self, StopKind::Discrepancy | StopKind::ResidualThreshold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopCondition {
    pub kind: StopKind,
    #[serde(default)]
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_rule: Option<f64>,
    #[serde(default, rename = "M", skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, rename = "C", skip_serializing_if = "Option::is_none")]
    pub discrepancy_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl StopCondition {
    pub fn new(kind: StopKind, delta: f64) -> Self {
        Self {
            kind,
            delta,
            b_rule: None,
            m: None,
            discrepancy_c: None,
            c: None,
            a: None,
            threshold: None,
        }
    }

    pub fn eps_power(delta: f64, b_rule: f64) -> Self {
        Self {
            b_rule: Some(b_rule),
            ..Self::new(StopKind::TimeRootEpsPower, delta)
        }
    }

    pub fn sqrt_eps(delta: f64, b_rule: f64) -> Self {
        Self {
            b_rule: Some(b_rule),
            ..Self::new(StopKind::TimeRootSqrtEps, delta)
        }
    }

    pub fn eps_sq_16m(delta: f64, m: f64) -> Self {
        Self {
            m: Some(m),
            ..Self::new(StopKind::TimeRootEpsSq16M, delta)
        }
    }

    pub fn discrepancy(delta: f64, c: f64) -> Self {
        Self {
            discrepancy_c: Some(c),
            ..Self::new(StopKind::Discrepancy, delta)
        }
    }

    pub fn residual_threshold(threshold: f64) -> Self {
        Self {
            threshold: Some(threshold),
            ..Self::new(StopKind::ResidualThreshold, 0.0)
        }
    }

    pub fn minimization(delta: f64, c: f64, a: f64) -> Self {
        Self {
            c: Some(c),
            a: Some(a),
            ..Self::new(StopKind::Minimization, delta)
        }
    }

    /// The same rule at another noise level.
    pub fn with_delta(&self, delta: f64) -> Self {
        Self { delta, ..*self }
    }

    pub fn b_rule(&self) -> f64 {
        self.b_rule.unwrap_or(DEFAULT_B)
    }

    pub fn discrepancy_c(&self) -> f64 {
        self.discrepancy_c.unwrap_or(DEFAULT_DISCREPANCY_C)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(DsmError::Usage(format!(
                "delta must be nonnegative, got {}",
                self.delta
            )));
        }
        match self.kind {
            StopKind::TimeRootEpsPower | StopKind::TimeRootSqrtEps => {
                let b = self.b_rule();
                if !(b > 0.0 && b < 1.0) {
                    return Err(DsmError::Usage(format!(
                        "b_rule must lie in (0, 1), got {b}"
                    )));
                }
            }
            StopKind::TimeRootEpsSq16M => match self.m {
                Some(m) if m > 0.0 => {}
                _ => {
                    return Err(DsmError::Usage(
                        "rule time_root_eps_sq_16M needs M > 0".into(),
                    ))
                }
            },
            StopKind::Discrepancy => {
                let c = self.discrepancy_c();
                if !(c > 1.0) {
                    return Err(DsmError::Usage(format!(
                        "discrepancy constant C must exceed 1, got {c}"
                    )));
                }
            }
            StopKind::ResidualThreshold => match self.threshold {
                Some(t) if t >= 0.0 => {}
                _ => {
                    return Err(DsmError::Usage(
                        "rule residual_threshold needs threshold >= 0".into(),
                    ))
                }
            },
            StopKind::Minimization => match (self.c, self.a) {
                (Some(c), Some(a)) if c > 0.0 && a > 0.0 => {}
                _ => {
                    return Err(DsmError::Usage(
                        "rule minimization needs the decay model v = c eps^a with c, a > 0".into(),
                    ))
                }
            },
        }
        Ok(())
    }

    /// The `ε` value at which a time rule stops; `0` means "never".
    pub fn target_eps(&self) -> Result<f64> {
        self.validate()?;
        let d = self.delta;
        Ok(match self.kind {
            StopKind::TimeRootEpsPower => d.powf(self.b_rule()),
            StopKind::TimeRootSqrtEps => {
                let half = 0.5 * d.powf(self.b_rule());
                half * half
            }
            StopKind::TimeRootEpsSq16M => (16.0 * self.m.expect("validated") * d).sqrt(),
            StopKind::Minimization => {
                let (c, a) = (self.c.expect("validated"), self.a.expect("validated"));
                (d / (c * a)).powf(1.0 / (1.0 + a))
            }
            StopKind::Discrepancy | StopKind::ResidualThreshold => {
                return Err(DsmError::Usage(format!(
                    "rule {} is checked during the run, not solved in advance",
                    self.kind.tag()
                )))
            }
        })
    }

    /// Whether an in-run rule fires at residual norm `res`.
    pub fn fires(&self, res: f64) -> bool {
        match self.kind {
            StopKind::Discrepancy => discrepancy_stop(res, self.delta, self.discrepancy_c()),
            StopKind::ResidualThreshold => res <= self.threshold.unwrap_or(0.0),
            _ => false,
        }
    }
}

/// Stopping time of a time rule on schedule `s`.
///
/// Exact data (`δ = 0`) never stops and yields `+∞`. A target above
/// `ε(0)` yields 0.
pub fn stopping_time(rule: &StopCondition, s: &EpsilonSchedule) -> Result<f64> {
    let target = rule.target_eps()?;
    if target == 0.0 {
        return Ok(f64::INFINITY);
    }
    s.solve_for(target)
}

/// `‖B(u_δ) - f_δ‖ ≤ C δ`.
pub fn discrepancy_stop(residual_norm: f64, delta: f64, c: f64) -> bool {
    residual_norm <= c * delta
}

/// Decay model `v(t) ≤ c ε(t)^a` for the distance of the regularized path to the solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayModel {
    pub c: f64,
    pub a: f64,
}

/// Minimizer of `c ε(t)^a + δ/ε(t)`.
pub fn minimization_stop(
    model: Option<DecayModel>,
    s: &EpsilonSchedule,
    delta: f64,
) -> Result<f64> {
    let m = model.ok_or_else(|| {
        DsmError::Usage("the minimization rule needs a known decay model v = c eps^a".into())
    })?;
    stopping_time(&StopCondition::minimization(delta, m.c, m.a), s)
}

/// Horizon for a constant regularization `ε`: `t_ε = ε⁻²`, so `ε t_ε → ∞`.
pub fn constant_eps_time(eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(DsmError::Usage(format!("eps must be positive, got {eps}")));
    }
    Ok(1.0 / (eps * eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sched() -> EpsilonSchedule {
        EpsilonSchedule::power(1.0, 1.0, 0.5).unwrap()
    }

    #[test]
    fn time_rule_examples() {
        let s = sched();
        assert_relative_eq!(
            stopping_time(&StopCondition::eps_power(1e-2, 0.5), &s).unwrap(),
            99.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            stopping_time(&StopCondition::sqrt_eps(1e-2, 0.5), &s).unwrap(),
            159999.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            stopping_time(&StopCondition::eps_sq_16m(1e-4, 1.0), &s).unwrap(),
            624.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn target_above_initial_stops_immediately() {
        let s = sched();
        assert_eq!(
            stopping_time(&StopCondition::eps_sq_16m(1.0, 1.0), &s).unwrap(),
            0.0
        );
    }

    #[test]
    fn constant_schedule_has_no_root() {
        let s = EpsilonSchedule::constant(0.5).unwrap();
        assert!(matches!(
            stopping_time(&StopCondition::eps_power(1e-2, 0.5), &s),
            Err(DsmError::NoRoot(_))
        ));
    }

    #[test]
    fn minimization_examples() {
        let s = sched();
        let model = Some(DecayModel { c: 1.0, a: 1.0 });
        assert_relative_eq!(
            minimization_stop(model, &s, 1e-4).unwrap(),
            9999.0,
            max_relative = 1e-10
        );
        let r = StopCondition::minimization(1e-6, 1.0, 2.0);
        assert_relative_eq!(
            r.target_eps().unwrap(),
            (0.5e-6f64).cbrt(),
            max_relative = 1e-14
        );
        assert_eq!(minimization_stop(model, &s, 0.0).unwrap(), f64::INFINITY);
        assert!(matches!(
            minimization_stop(None, &s, 1e-4),
            Err(DsmError::Usage(_))
        ));
    }

    #[test]
    fn constant_eps_examples() {
        assert_relative_eq!(constant_eps_time(0.1).unwrap(), 100.0, max_relative = 1e-14);
        assert_relative_eq!(
            constant_eps_time(0.01).unwrap(),
            10000.0,
            max_relative = 1e-14
        );
        let a = 0.1 * constant_eps_time(0.1).unwrap();
        let b = 0.01 * constant_eps_time(0.01).unwrap();
        assert!(b > a);
    }

    #[test]
    fn discrepancy_examples() {
        assert!(!discrepancy_stop(1e-12, 0.0, 1.5));
        assert!(discrepancy_stop(0.0, 0.0, 1.5));
        assert!(discrepancy_stop(100.0, 1e-3, 1e6));
        let rule = StopCondition::discrepancy(1e-3, 1.5);
        assert!(rule.fires(1.4e-3) && !rule.fires(1.6e-3));
    }

    #[test]
    fn validation() {
        assert!(StopCondition::discrepancy(1e-3, 1.0).validate().is_err());
        assert!(StopCondition::eps_power(-1.0, 0.5).validate().is_err());
        assert!(StopCondition::eps_power(1e-3, 1.5).validate().is_err());
        assert!(StopCondition::new(StopKind::TimeRootEpsSq16M, 1e-3)
            .validate()
            .is_err());
    }

    #[test]
    fn config_names() {
        let r: StopCondition =
            serde_json::from_str(r#"{"kind":"time_root_eps_sq_16M","delta":1e-3,"M":2.0}"#)
                .unwrap();
        assert_eq!(r, StopCondition::eps_sq_16m(1e-3, 2.0));
        let r: StopCondition =
            serde_json::from_str(r#"{"kind":"discrepancy","delta":1e-3,"C":2.0}"#).unwrap();
        assert_eq!(r.discrepancy_c(), 2.0);
        assert!(
            serde_json::from_str::<StopCondition>(r#"{"kind":"discrepancy","bogus":1}"#).is_err()
        );
    }
}
