//! Seeded random sampling. All randomness in the crate flows through
//! [`rng_for`], which derives an independent ChaCha stream per purpose from
//! one user seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{Matrix, Vector};

/// Generator for stream `stream` of seed `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniformly distributed unit vector in ℝⁿ.
pub fn unit_vector<R: Rng>(rng: &mut R, n: usize) -> Vector {
    loop {
        let v = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Uniform sample from the closed ball `B(center, radius)`.
pub fn point_in_ball<R: Rng>(rng: &mut R, center: &Vector, radius: f64) -> Vector {
    let n = center.len();
    let dir = unit_vector(rng, n);
    let scale = radius * rng.random::<f64>().powf(1.0 / n as f64);
    center + dir * scale
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with sign fix).
pub fn orthogonal_matrix<R: Rng>(rng: &mut R, n: usize) -> Matrix {
    let g = Matrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Uniform draw in `[lo, hi)`.
pub fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}
