//! Real functions of time used by the certificates, with analytic
//! derivatives and integrals where the form is known.

use std::fmt;
use std::sync::Arc;

use crate::quadrature::adaptive_simpson;
use crate::schedule::EpsilonSchedule;

type Func = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Absolute tolerance for numerically integrated functions.
pub const QUAD_TOL: f64 = 1e-10;

#[derive(Clone)]
pub enum ScalarFn {
    Constant(f64),
    /// `scale · ε(t)^power`.
    EpsPower {
        scale: f64,
        power: f64,
        schedule: EpsilonSchedule,
    },
    /// `scale · |ε̇(t)| / ε(t)`.
    EpsLogRate {
        scale: f64,
        schedule: EpsilonSchedule,
    },
    /// Arbitrary function with an optional analytic derivative.
    Custom {
        f: Func,
        df: Option<Func>,
    },
}

impl fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarFn::Constant(c) => write!(f, "Constant({c})"),
            ScalarFn::EpsPower {
                scale,
                power,
                schedule,
            } => {
                write!(f, "EpsPower({scale} * eps^{power}, {schedule:?})")
            }
            ScalarFn::EpsLogRate { scale, schedule } => {
                write!(f, "EpsLogRate({scale}, {schedule:?})")
            }
            ScalarFn::Custom { df, .. } => {
                write!(f, "Custom(analytic derivative: {})", df.is_some())
            }
        }
    }
}

impl ScalarFn {
    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        ScalarFn::Custom {
            f: Arc::new(f),
            df: None,
        }
    }

    pub fn custom_with_derivative(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ScalarFn::Custom {
            f: Arc::new(f),
            df: Some(Arc::new(df)),
        }
    }

    /// `μ = 2M/ε`.
    pub fn mu_inverse_eps(m: f64, schedule: EpsilonSchedule) -> Self {
        ScalarFn::EpsPower {
            scale: 2.0 * m,
            power: -1.0,
            schedule,
        }
    }

    /// `μ = 2M/√ε`.
    pub fn mu_inverse_sqrt_eps(m: f64, schedule: EpsilonSchedule) -> Self {
        ScalarFn::EpsPower {
            scale: 2.0 * m,
            power: -0.5,
            schedule,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            ScalarFn::Constant(c) => *c,
            ScalarFn::EpsPower {
                scale,
                power,
                schedule,
            } => scale * schedule.at(t).powf(*power),
            ScalarFn::EpsLogRate { scale, schedule } => scale * schedule.derivative_ratio(t).0,
            ScalarFn::Custom { f, .. } => f(t),
        }
    }

    pub fn has_analytic_derivative(&self) -> bool {
        !matches!(self, ScalarFn::Custom { df: None, .. })
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            ScalarFn::Constant(_) => 0.0,
            ScalarFn::EpsPower {
                scale,
                power,
                schedule,
            } => scale * power * schedule.at(t).powf(power - 1.0) * schedule.derivative(t),
            ScalarFn::EpsLogRate { scale, schedule } => match *schedule {
                // b/(c0+t) differentiates to -b/(c0+t)^2.
                EpsilonSchedule::Power { c0, b, .. } => -scale * b / ((c0 + t) * (c0 + t)),
                EpsilonSchedule::Constant { .. } => 0.0,
            },
            ScalarFn::Custom { df: Some(df), .. } => df(t),
            ScalarFn::Custom { f, df: None } => {
                let h = f64::EPSILON.cbrt() * (1.0 + t.abs());
                (f(t + h) - f(t - h)) / (2.0 * h)
            }
        }
    }

    /// `∫_{a}^{b}` of the function.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        match self {
            ScalarFn::Constant(c) => c * (b - a),
            ScalarFn::EpsPower {
                scale,
                power,
                schedule,
            } if *power == 1.0 => scale * schedule.integral(a, b),
            ScalarFn::EpsLogRate { scale, schedule } => {
                // |ε̇|/ε = -d/dt ln ε.
                scale * (schedule.at(a) / schedule.at(b)).ln()
            }
            _ => adaptive_simpson(|t| self.eval(t), a, b, QUAD_TOL),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mu_family_derivatives_match_finite_differences() {
        let s = EpsilonSchedule::power(2.0, 1.5, 0.6).unwrap();
        for f in [
            ScalarFn::mu_inverse_eps(1.3, s),
            ScalarFn::mu_inverse_sqrt_eps(0.7, s),
        ] {
            let g = f.clone();
            let numeric = ScalarFn::custom(move |t| g.eval(t));
            for t in [0.5, 3.0, 40.0] {
                assert_relative_eq!(f.derivative(t), numeric.derivative(t), max_relative = 1e-7);
            }
        }
    }

    #[test]
    fn log_rate_integral_is_exact() {
        let s = EpsilonSchedule::power(1.0, 2.0, 0.5).unwrap();
        let f = ScalarFn::EpsLogRate {
            scale: 3.0,
            schedule: s,
        };
        let numeric = adaptive_simpson(|t| f.eval(t), 0.0, 10.0, 1e-13);
        assert_relative_eq!(f.integral(0.0, 10.0), numeric, max_relative = 1e-10);
    }

    #[test]
    fn power_one_integral_uses_closed_form() {
        let s = EpsilonSchedule::power(1.0, 1.0, 0.5).unwrap();
        let f = ScalarFn::EpsPower {
            scale: 2.0,
            power: 1.0,
            schedule: s,
        };
        assert_relative_eq!(
            f.integral(0.0, 3.0),
            2.0 * 2.0 * (2.0 - 1.0),
            epsilon = 1e-14
        );
    }
}
