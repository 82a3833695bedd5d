//! Regularization schedules ε(t).

use serde::{Deserialize, Serialize};

use crate::error::{DsmError, Result};

/// Default decay exponent when a config does not give one.
pub const DEFAULT_B: f64 = 0.5;

/// A positive, nonincreasing regularization function of time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EpsilonSchedule {
    /// `ε(t) = c1 (c0 + t)^(-b)` with `0 < b < 1`.
    Power {
        c1: f64,
        c0: f64,
        b: f64,
    },
    Constant {
        eps: f64,
    },
}

impl EpsilonSchedule {
    pub fn power(c1: f64, c0: f64, b: f64) -> Result<Self> {
        let s = EpsilonSchedule::Power { c1, c0, b };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(eps: f64) -> Result<Self> {
        let s = EpsilonSchedule::Constant { eps };
        s.validate()?;
        Ok(s)
    }

    /// Power schedule with `ε(0) = eps0`, i.e. `c1 = eps0 c0^b`.
    pub fn power_from_initial(eps0: f64, c0: f64, b: f64) -> Result<Self> {
        Self::power(eps0 * c0.powf(b), c0, b)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            EpsilonSchedule::Power { c1, c0, b } => {
                if !(c1 > 0.0 && c1.is_finite()) {
                    return Err(DsmError::Usage(format!(
                        "power schedule needs c1 > 0, got {c1}"
                    )));
                }
                if !(c0 > 0.0 && c0.is_finite()) {
                    return Err(DsmError::Usage(format!(
                        "power schedule needs c0 > 0, got {c0}"
                    )));
                }
                if !(b > 0.0 && b < 1.0) {
                    return Err(DsmError::Usage(format!(
                        "power schedule needs 0 < b < 1, got {b}"
                    )));
                }
            }
            EpsilonSchedule::Constant { eps } => {
                if !(eps > 0.0 && eps.is_finite()) {
                    return Err(DsmError::Usage(format!(
                        "constant schedule needs eps > 0, got {eps}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, EpsilonSchedule::Constant { .. })
    }

    /// `ε(t)`; fails for negative `t`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if t < 0.0 || t.is_nan() {
            return Err(DsmError::Usage(format!(
                "schedule evaluated at negative time {t}"
            )));
        }
        Ok(self.at(t))
    }

    /// `ε(t)` without the domain check.
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            EpsilonSchedule::Power { c1, c0, b } => c1 * (c0 + t).powf(-b),
            EpsilonSchedule::Constant { eps } => eps,
        }
    }

    /// `ε̇(t)`.
    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            EpsilonSchedule::Power { c1, c0, b } => -b * c1 * (c0 + t).powf(-b - 1.0),
            EpsilonSchedule::Constant { .. } => 0.0,
        }
    }

    /// `(|ε̇|/ε, |ε̇|/ε²)` at `t`.
    pub fn derivative_ratio(&self, t: f64) -> (f64, f64) {
        match *self {
            EpsilonSchedule::Power { c1, c0, b } => (b / (c0 + t), b / c1 * (c0 + t).powf(b - 1.0)),
            EpsilonSchedule::Constant { .. } => (0.0, 0.0),
        }
    }

    /// `∫_{t0}^{t1} ε(s) ds` in closed form.
    pub fn integral(&self, t0: f64, t1: f64) -> f64 {
        match *self {
            EpsilonSchedule::Power { c1, c0, b } => {
                let p = 1.0 - b;
                c1 * ((c0 + t1).powf(p) - (c0 + t0).powf(p)) / p
            }
            EpsilonSchedule::Constant { eps } => eps * (t1 - t0),
        }
    }

    /// The time at which `ε(t) = target`.
    ///
    /// Returns 0 when `target ≥ ε(0)`. A constant schedule has no root.
    pub fn solve_for(&self, target: f64) -> Result<f64> {
        if !(target > 0.0) {
            return Err(DsmError::Usage(format!(
                "schedule target must be positive, got {target}"
            )));
        }
        match *self {
            EpsilonSchedule::Power { c1, c0, b } => {
                let t = (c1 / target).powf(1.0 / b) - c0;
                if t <= 0.0 {
                    log::info!(
                        "target eps {target:e} is not below eps(0) = {:e}; stopping at t = 0",
                        self.at(0.0)
                    );
                    Ok(0.0)
                } else {
                    Ok(t)
                }
            }
            EpsilonSchedule::Constant { eps } => Err(DsmError::NoRoot(format!(
                "constant schedule eps = {eps:e} never reaches {target:e}"
            ))),
        }
    }
}

/// The schedule used for the global convergence result on monotone
/// problems: `c0 = 4b` and `c1 = 4 M r c0^b`, so `ε(0) = 4 M r`.
pub fn theorem42_schedule(m: f64, r: f64, b: f64) -> Result<EpsilonSchedule> {
    theorem42_schedule_with_c0(m, r, b, 4.0 * b)
}

/// As [`theorem42_schedule`] with a caller-chosen `c0`; requires `b/c0 ≤ 1/4`.
pub fn theorem42_schedule_with_c0(m: f64, r: f64, b: f64, c0: f64) -> Result<EpsilonSchedule> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(DsmError::Usage(format!("M must be positive, got {m}")));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(DsmError::Usage(format!("r must be positive, got {r}")));
    }
    if !(b > 0.0 && b < 1.0) {
        return Err(DsmError::Usage(format!("b must lie in (0, 1), got {b}")));
    }
    if !(c0 > 0.0) || b / c0 > 0.25 * (1.0 + 1e-12) {
        return Err(DsmError::Usage(format!("c0 = {c0} violates b/c0 <= 1/4")));
    }
    EpsilonSchedule::power(4.0 * m * r * c0.powf(b), c0, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eval_examples() {
        let s = EpsilonSchedule::power(1.0, 1.0, 0.5).unwrap();
        assert_eq!(s.eval(0.0).unwrap(), 1.0);
        assert_relative_eq!(s.eval(3.0).unwrap(), 0.5, epsilon = 1e-15);
        let c = EpsilonSchedule::constant(0.25).unwrap();
        assert_eq!(c.eval(17.0).unwrap(), 0.25);
    }

    #[test]
    fn eval_rejects_negative_time() {
        let s = EpsilonSchedule::power(1.0, 1.0, 0.5).unwrap();
        assert!(matches!(s.eval(-1.0), Err(DsmError::Usage(_))));
    }

    #[test]
    fn derivative_ratio_examples() {
        let s = EpsilonSchedule::power(1.0, 1.0, 0.5).unwrap();
        assert_eq!(s.derivative_ratio(0.0), (0.5, 0.5));
        let s = EpsilonSchedule::power(1.0, 4.0, 0.5).unwrap();
        let (a, b) = s.derivative_ratio(0.0);
        assert_relative_eq!(a, 0.125, epsilon = 1e-15);
        assert_relative_eq!(b, 0.25, epsilon = 1e-15);
        let c = EpsilonSchedule::constant(2.0).unwrap();
        assert_eq!(c.derivative_ratio(5.0), (0.0, 0.0));
    }

    #[test]
    fn theorem42_examples() {
        let s = theorem42_schedule(1.0, 1.0, 0.5).unwrap();
        match s {
            EpsilonSchedule::Power { c1, c0, b } => {
                assert_eq!(c0, 2.0);
                assert_eq!(b, 0.5);
                assert_relative_eq!(c1, 5.656854249492381, epsilon = 1e-12);
            }
            _ => unreachable!(),
        }
        assert_relative_eq!(s.at(0.0), 4.0, epsilon = 1e-12);
        let s = theorem42_schedule(2.0, 0.5, 0.5).unwrap();
        assert_relative_eq!(s.at(0.0), 4.0, epsilon = 1e-12);
        let (_, ratio) = s.derivative_ratio(0.0);
        assert_relative_eq!(ratio, 1.0 / 16.0, epsilon = 1e-12);
    }

    #[test]
    fn theorem42_rejects_bad_parameters() {
        assert!(theorem42_schedule(0.0, 1.0, 0.5).is_err());
        assert!(theorem42_schedule(1.0, 1.0, 1.0).is_err());
        assert!(theorem42_schedule_with_c0(1.0, 1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn solve_for_examples() {
        let s = EpsilonSchedule::power(1.0, 1.0, 0.5).unwrap();
        assert_relative_eq!(s.solve_for(0.1).unwrap(), 99.0, max_relative = 1e-12);
        assert_eq!(s.solve_for(2.0).unwrap(), 0.0);
        let c = EpsilonSchedule::constant(1.0).unwrap();
        assert!(matches!(c.solve_for(0.5), Err(DsmError::NoRoot(_))));
    }

    #[test]
    fn config_round_trip() {
        let s: EpsilonSchedule =
            serde_json::from_str(r#"{"kind":"power","c1":1.0,"c0":2.0,"b":0.5}"#).unwrap();
        assert_eq!(
            s,
            EpsilonSchedule::Power {
                c1: 1.0,
                c0: 2.0,
                b: 0.5
            }
        );
        let c: EpsilonSchedule = serde_json::from_str(r#"{"kind":"constant","eps":0.1}"#).unwrap();
        assert_eq!(c, EpsilonSchedule::Constant { eps: 0.1 });
        assert!(
            serde_json::from_str::<EpsilonSchedule>(r#"{"kind":"constant","eps":0.1,"x":1}"#)
                .is_err()
        );
    }
}
