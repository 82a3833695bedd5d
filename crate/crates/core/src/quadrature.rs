//! Adaptive Simpson quadrature and truncated improper integrals.

use crate::error::{DsmError, Result};

const MAX_DEPTH: u32 = 50;

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    if b < a {
        return -adaptive_simpson(f, b, a, tol);
    }
    // Seed with four panels so narrow features near the ends are not missed.
    let panels = 4;
    let width = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let lo = a + k as f64 * width;
            let hi = if k + 1 == panels { b } else { lo + width };
            let (flo, fhi) = (f(lo), f(hi));
            let mid = 0.5 * (lo + hi);
            let fmid = f(mid);
            let whole = simpson(lo, hi, flo, fmid, fhi);
            recurse(
                &f,
                lo,
                hi,
                flo,
                fmid,
                fhi,
                whole,
                tol / panels as f64,
                MAX_DEPTH,
            )
        })
        .sum()
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol || (m - a).abs() <= f64::EPSILON * a.abs().max(1.0) {
        return left + right + delta / 15.0;
    }
    recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Horizon beyond which a nonvanishing integrand is declared divergent.
pub const MAX_HORIZON: f64 = 1e12;

/// Integrates a nonnegative `f` over `[a, ∞)`.
///
/// Integrates over doubling windows and stops once the integrand has stayed
/// below `1e-14 * peak` across a whole window. Fails with
/// [`DsmError::Inapplicable`] if the horizon reaches [`MAX_HORIZON`] first.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, tol: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut lo = a;
    let mut width = 1.0;
    let mut peak = 0.0_f64;
    loop {
        let hi = lo + width;
        let samples = (0..=16).map(|k| f(lo + width * k as f64 / 16.0).abs());
        let window_peak = samples.fold(0.0_f64, f64::max);
        peak = peak.max(window_peak);
        total += adaptive_simpson(&f, lo, hi, tol);
        if !total.is_finite() {
            return Err(DsmError::Inapplicable(
                "improper integral is not finite".into(),
            ));
        }
        if window_peak <= 1e-14 * peak {
            return Ok(total);
        }
        if hi >= MAX_HORIZON {
            return Err(DsmError::Inapplicable(format!(
                "improper integral has not converged by t = {hi:e}"
            )));
        }
        lo = hi;
        width *= 2.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn simpson_polynomial_exact() {
        let v = adaptive_simpson(|x| x * x * x - 2.0 * x, 0.0, 2.0, 1e-12);
        assert_relative_eq!(v, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn simpson_exponential() {
        let v = adaptive_simpson(f64::exp, 0.0, 1.0, 1e-12);
        assert_relative_eq!(v, std::f64::consts::E - 1.0, epsilon = 1e-11);
    }

    #[test]
    fn reversed_limits_flip_sign() {
        let v = adaptive_simpson(f64::exp, 1.0, 0.0, 1e-12);
        assert_relative_eq!(v, 1.0 - std::f64::consts::E, epsilon = 1e-11);
    }

    #[test]
    fn improper_exponential() {
        let v = integrate_to_infinity(|t| (-t).exp(), 0.0, 1e-12).unwrap();
        assert_relative_eq!(v, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn improper_divergent_is_inapplicable() {
        let r = integrate_to_infinity(|t| 1.0 / (1.0 + t), 0.0, 1e-10);
        assert!(matches!(r, Err(DsmError::Inapplicable(_))));
    }
}
