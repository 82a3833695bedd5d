//! Reproducible test problems, addressable by name.

use std::f64::consts::PI;
use std::sync::Arc;

use serde_json::json;

use crate::error::{DsmError, Result};
use crate::linalg::{condition_number, pseudo_inverse_solve, spectral_norm, Matrix, Vector};
use crate::operator::{
    sector_probe, Bounds, FnOperator, NoisyProblem, Operator, OperatorProblem, SectorSpec,
};
use crate::quadrature::adaptive_simpson;
use crate::sampling::{orthogonal_matrix, point_in_ball, rng_for, uniform, unit_vector};

/// Name patterns accepted by [`from_name`], in listing order.
pub const ZOO_NAMES: [&str; 5] = [
    "hilbert:n",
    "fredholm:n:kernel",
    "monotone_cubic:n:seed",
    "nonmonotone_quad:n:seed",
    "wellposed_smooth:n:seed",
];

const STREAM_SOLUTION: u64 = 1;
const STREAM_START: u64 = 2;
const STREAM_MATRIX: u64 = 3;
/// Noise streams start here; a sweep uses one stream per noise level.
pub const STREAM_NOISE: u64 = 100;

/// The `n × n` Hilbert matrix, entries `1/(i+j+1)` (zero-based).
pub fn hilbert_matrix(n: usize) -> Matrix {
    Matrix::from_fn(n, n, |i, j| 1.0 / (i + j + 1) as f64)
}

/// `H_n x = H_n 1` with `y = 1`, started from zero.
pub fn hilbert(n: usize) -> Result<OperatorProblem> {
    if !(2..=12).contains(&n) {
        return Err(DsmError::Usage(format!(
            "hilbert needs 2 <= n <= 12, got {n}"
        )));
    }
    let a = hilbert_matrix(n);
    let y = Vector::from_element(n, 1.0);
    let f = &a * &y;
    let cond = condition_number(&a);
    log::info!("hilbert:{n} condition number {cond:e}");
    let mut p = OperatorProblem::linear(format!("hilbert:{n}"), a, f)?;
    p.radius = 2.0 * y.norm();
    p.monotone = true;
    p.y_known = Some(y);
    p.notes.insert("condition_number".into(), json!(cond));
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    /// `k(s, t) = e^{st}`.
    ExpSt,
    /// `k(s, t) = exp(-(s-t)² / (2σ²))`, `σ = 0.1`.
    Gaussian,
}

impl Kernel {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "exp_st" => Ok(Kernel::ExpSt),
            "gaussian" => Ok(Kernel::Gaussian),
            other => Err(DsmError::Usage(format!(
                "unknown kernel '{other}' (expected exp_st or gaussian)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kernel::ExpSt => "exp_st",
            Kernel::Gaussian => "gaussian",
        }
    }

    pub fn eval(&self, s: f64, t: f64) -> f64 {
        const SIGMA: f64 = 0.1;
        match self {
            Kernel::ExpSt => (s * t).exp(),
            Kernel::Gaussian => (-(s - t) * (s - t) / (2.0 * SIGMA * SIGMA)).exp(),
        }
    }

    /// `∫₀¹ k(s, t) dt`, the image of the constant function 1.
    pub fn image_of_one(&self, s: f64) -> f64 {
        match self {
            Kernel::ExpSt => {
                if s.abs() < 1e-8 {
                    1.0 + s / 2.0
                } else {
                    s.exp_m1() / s
                }
            }
            Kernel::Gaussian => adaptive_simpson(|t| self.eval(s, t), 0.0, 1.0, 1e-14),
        }
    }
}

/// Trapezoid nodes and weights on `[0, 1]`.
pub fn trapezoid_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let h = 1.0 / (n - 1) as f64;
    let nodes = (0..n).map(|j| j as f64 * h).collect();
    let weights = (0..n)
        .map(|j| if j == 0 || j == n - 1 { 0.5 * h } else { h })
        .collect();
    (nodes, weights)
}

/// Trapezoid discretization of `∫₀¹ k(s, t) u(t) dt = f(s)`.
///
/// The convergence target is the minimal-norm solution of the discrete
/// system for the sampled continuum data; the data is then replaced by its
/// image so the discrete equation is exactly consistent.
pub fn fredholm(n: usize, kernel: Kernel) -> Result<OperatorProblem> {
    if n < 4 {
        return Err(DsmError::Usage(format!("fredholm needs n >= 4, got {n}")));
    }
    let (nodes, weights) = trapezoid_rule(n);
    let a = Matrix::from_fn(n, n, |i, j| kernel.eval(nodes[i], nodes[j]) * weights[j]);
    let continuum = Vector::from_iterator(n, nodes.iter().map(|&s| kernel.image_of_one(s)));
    let y = pseudo_inverse_solve(&a, &continuum)?;
    let f = &a * &y;
    let cond = condition_number(&a);
    let projection_gap = (&f - &continuum).norm();
    log::info!(
        "fredholm:{n}:{} condition {cond:e}, |y| = {:e}, |f - continuum data| = {projection_gap:e}",
        kernel.name(),
        y.norm()
    );
    let mut p = OperatorProblem::linear(format!("fredholm:{n}:{}", kernel.name()), a, f)?;
    p.radius = 2.0 * y.norm().max(1.0);
    p.notes.insert("condition_number".into(), json!(cond));
    p.notes
        .insert("continuum_rhs".into(), json!(continuum.as_slice()));
    p.notes
        .insert("continuum_solution_norm".into(), json!((n as f64).sqrt()));
    p.notes
        .insert("rhs_projection_gap".into(), json!(projection_gap));
    p.y_known = Some(y);
    Ok(p)
}

/// `F(u) = L u + u³ - f` with `L` random symmetric positive definite,
/// spectrum in `[0.1, 2]`, started from zero on the ball of radius `3(‖y‖ + ‖u0‖)`.
pub fn monotone_cubic(n: usize, seed: u64) -> Result<OperatorProblem> {
    if n < 1 {
        return Err(DsmError::Usage("monotone_cubic needs n >= 1".into()));
    }
    let mut rng = rng_for(seed, STREAM_MATRIX);
    let q = orthogonal_matrix(&mut rng, n);
    let spectrum = Vector::from_fn(n, |_, _| uniform(&mut rng, 0.1, 2.0));
    let l = &q * Matrix::from_diagonal(&spectrum) * q.transpose();
    let l = (&l + l.transpose()) * 0.5;
    let y = point_in_ball(&mut rng_for(seed, STREAM_SOLUTION), &Vector::zeros(n), 1.0);
    monotone_cubic_from(format!("monotone_cubic:{n}:{seed}"), l, y)
}

/// [`monotone_cubic`] with a given `L` and solution `y`.
pub fn monotone_cubic_from(name: String, l: Matrix, y: Vector) -> Result<OperatorProblem> {
    let n = l.nrows();
    let f = &l * &y + y.map(|x| x * x * x);
    let u0 = Vector::zeros(n);
    let r = y.norm() + u0.norm();
    let radius = 3.0 * r;
    let reach = u0.norm() + radius;
    let l_norm = spectral_norm(&l);
    let (apply_l, jac_l) = (l.clone(), l);
    let op = FnOperator::new(
        n,
        move |u| &apply_l * u + u.map(|x| x * x * x),
        move |u| &jac_l + Matrix::from_diagonal(&u.map(|x| 3.0 * x * x)),
    );
    let mut p = OperatorProblem::new(name, Arc::new(op), f)?;
    p.u0 = u0;
    p.radius = radius;
    p.bounds = Bounds {
        m1: l_norm + 3.0 * reach * reach,
        m2: 6.0 * reach,
        inverse: None,
        coercivity: None,
    };
    p.monotone = true;
    p.notes.insert("r".into(), json!(r));
    p.y_known = Some(y);
    Ok(p)
}

/// `B(u) = D u + 0.1 u²` with positive diagonal `D` (first entry 0.5, the
/// others in `[0.5, 2]`); monotone near `y` but not on large balls.
pub fn nonmonotone_quad(n: usize, seed: u64) -> Result<OperatorProblem> {
    if n < 1 {
        return Err(DsmError::Usage("nonmonotone_quad needs n >= 1".into()));
    }
    let mut rng = rng_for(seed, STREAM_MATRIX);
    let d = Vector::from_fn(n, |i, _| {
        if i == 0 {
            0.5
        } else {
            uniform(&mut rng, 0.5, 2.0)
        }
    });
    let y = point_in_ball(&mut rng_for(seed, STREAM_SOLUTION), &Vector::zeros(n), 1.0);
    let dir = unit_vector(&mut rng_for(seed, STREAM_START), n);
    let u0 = &y + dir * 0.2;
    let sector = SectorSpec::new(PI / 4.0, 0.5)?;
    let f = d.component_mul(&y) + y.map(|x| 0.1 * x * x);

    let (da, dj) = (d.clone(), d.clone());
    let op: Arc<FnOperator> = Arc::new(FnOperator::new(
        n,
        move |u| da.component_mul(u) + u.map(|x| 0.1 * x * x),
        move |u| Matrix::from_diagonal(&(&dj + u.map(|x| 0.2 * x))),
    ));
    let mut p = OperatorProblem::new(format!("nonmonotone_quad:{n}:{seed}"), op, f)?;
    p.u0 = u0;
    p.sector = Some(sector);
    p.y_known = Some(y.clone());

    let mut radius = 0.5;
    let mut accepted = false;
    for _ in 0..4 {
        p.radius = radius;
        if sector_probe(&p, &sector, 200, seed)?.passed {
            accepted = true;
            break;
        }
        log::warn!("nonmonotone_quad: sector probe failed on radius {radius}, shrinking");
        radius *= 0.5;
    }
    if !accepted {
        return Err(DsmError::Usage(format!(
            "nonmonotone_quad:{n}:{seed}: sector condition fails on every tried ball"
        )));
    }
    let reach = p.u0.amax() + radius;
    let m1 = d.max() + 0.2 * reach;
    let m2 = 0.2;
    p.bounds = Bounds {
        m1,
        m2,
        inverse: None,
        coercivity: None,
    };

    // Source element z with y = T z, T = A(y)ᵀ A(y), for a zero center.
    let a_y = p.jacobian(&y)?;
    let t = a_y.tr_mul(&a_y);
    let z = crate::linalg::lu_solve(&t, &y)?;
    let z_norm = z.norm();
    let small = 2.0 * m1 * m2 * z_norm <= 0.5;
    log::info!(
        "nonmonotone_quad:{n}:{seed} source element |z| = {z_norm:e}, 2 M1 M2 |z| <= 1/2: {small}"
    );
    p.notes.insert("source_element".into(), json!(z.as_slice()));
    p.notes.insert("source_norm".into(), json!(z_norm));
    p.notes.insert("source_small".into(), json!(small));
    p.notes.insert("diagonal".into(), json!(d.as_slice()));
    Ok(p)
}

/// `F(u) = u + 0.3 sin(u) - f`, so `F'` has spectrum in `[0.7, 1.3]`.
pub fn wellposed_smooth(n: usize, seed: u64) -> Result<OperatorProblem> {
    if n < 1 {
        return Err(DsmError::Usage("wellposed_smooth needs n >= 1".into()));
    }
    let y = point_in_ball(&mut rng_for(seed, STREAM_SOLUTION), &Vector::zeros(n), 1.0);
    let dir = unit_vector(&mut rng_for(seed, STREAM_START), n);
    let u0 = &y + dir * 0.3;
    let op = FnOperator::componentwise(n, |x| x + 0.3 * x.sin(), |x| 1.0 + 0.3 * x.cos());
    let f = op.apply(&y);
    let mut p = OperatorProblem::new(format!("wellposed_smooth:{n}:{seed}"), Arc::new(op), f)?;
    p.u0 = u0;
    p.radius = 1.0;
    p.bounds = Bounds {
        m1: 1.3,
        m2: 0.3,
        inverse: Some(1.0 / 0.7),
        coercivity: Some(0.7),
    };
    p.monotone = true;
    p.y_known = Some(y);
    Ok(p)
}

/// Perturbs the data by exactly `delta` in a seeded uniformly random direction.
pub fn add_noise(p: &OperatorProblem, delta: f64, seed: u64) -> Result<NoisyProblem> {
    add_noise_stream(p, delta, seed, STREAM_NOISE)
}

/// [`add_noise`] drawing from a specific generator stream.
pub fn add_noise_stream(
    p: &OperatorProblem,
    delta: f64,
    seed: u64,
    stream: u64,
) -> Result<NoisyProblem> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(DsmError::Usage(format!(
            "noise level must be nonnegative, got {delta}"
        )));
    }
    let f_delta = if delta == 0.0 {
        p.rhs.clone()
    } else {
        let e = unit_vector(&mut rng_for(seed, stream), p.dim());
        &p.rhs + e * delta
    };
    NoisyProblem::new(p.clone(), f_delta, delta)
}

/// Builds a zoo problem from its name, e.g. `monotone_cubic:8:0`.
pub fn from_name(name: &str) -> Result<OperatorProblem> {
    let parts: Vec<&str> = name.split(':').collect();
    let usage = || {
        DsmError::Usage(format!(
            "unknown problem '{name}' (expected one of {})",
            ZOO_NAMES.join(", ")
        ))
    };
    let dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| DsmError::Usage(format!("bad dimension '{s}' in '{name}'")))
    };
    let seed = |s: Option<&&str>| match s {
        None => Ok(0),
        Some(s) => s
            .parse::<u64>()
            .map_err(|_| DsmError::Usage(format!("bad seed '{s}' in '{name}'"))),
    };
    match parts.as_slice() {
        ["hilbert", n] => hilbert(dim(n)?),
        ["fredholm", n] => fredholm(dim(n)?, Kernel::ExpSt),
        ["fredholm", n, k] => fredholm(dim(n)?, Kernel::parse(k)?),
        ["monotone_cubic", n, rest @ ..] if rest.len() <= 1 => {
            monotone_cubic(dim(n)?, seed(rest.first())?)
        }
        ["nonmonotone_quad", n, rest @ ..] if rest.len() <= 1 => {
            nonmonotone_quad(dim(n)?, seed(rest.first())?)
        }
        ["wellposed_smooth", n, rest @ ..] if rest.len() <= 1 => {
            wellposed_smooth(dim(n)?, seed(rest.first())?)
        }
        _ => Err(usage()),
    }
}
