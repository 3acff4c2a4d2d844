//! Seeded synthetic datasets.
//!
//! * `gaussian_blobs`: example `i` has class `i mod C` (so class counts differ
//!   by at most one) and features `μ_c + N(0, I)`, with
//!   `μ_c = (s/√2)·e_c`; any two means are exactly `s` apart.
//! * `two_moons_2class`: two interleaved half circles in the first two
//!   coordinates, `N(0, 0.1²)` noise on every coordinate.

use rand::Rng;
use rand_distr::StandardNormal;

use super::IoError;
use crate::dataset::{Dataset, Example};
use crate::rng;

/// Mean separation (in units of the noise standard deviation) used by
/// [`generate_synthetic`].
pub const DEFAULT_BLOB_SEPARATION: f64 = 3.0;

pub fn gaussian_blobs(n: usize, dim: usize, classes: usize, separation: f64, seed: u64) -> Result<Dataset, IoError> {
    if n == 0 || dim == 0 || classes < 2 {
        return Err(IoError::InvalidSynthetic(format!(
            "gaussian_blobs needs n ≥ 1, dim ≥ 1 and at least 2 classes (got n = {n}, dim = {dim}, classes = {classes})"
        )));
    }
    if classes > dim {
        return Err(IoError::InvalidSynthetic(format!(
            "gaussian_blobs places class means on coordinate axes, so classes ({classes}) may not exceed dim ({dim})"
        )));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(IoError::InvalidSynthetic(format!("separation must be finite and non-negative, got {separation}")));
    }
    let offset = separation / std::f64::consts::SQRT_2;
    let mut r = rng::seeded(seed);
    let examples = (0..n)
        .map(|i| {
            let c = i % classes;
            let features = (0..dim)
                .map(|k| {
                    let noise: f64 = r.sample(StandardNormal);
                    if k == c {
                        offset + noise
                    } else {
                        noise
                    }
                })
                .collect();
            Example::new(features, c)
        })
        .collect();
    Ok(Dataset::new(examples, dim, classes)?)
}

pub fn two_moons(n: usize, dim: usize, seed: u64) -> Result<Dataset, IoError> {
    if n == 0 || dim < 2 {
        return Err(IoError::InvalidSynthetic(format!(
            "two_moons_2class needs n ≥ 1 and dim ≥ 2 (got n = {n}, dim = {dim})"
        )));
    }
    let mut r = rng::seeded(seed);
    let examples = (0..n)
        .map(|i| {
            let c = i % 2;
            let t = r.random_range(0.0..std::f64::consts::PI);
            let (x, y) = if c == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            let mut features = vec![x, y];
            features.resize(dim, 0.0);
            for f in &mut features {
                let noise: f64 = r.sample(StandardNormal);
                *f += 0.1 * noise;
            }
            Example::new(features, c)
        })
        .collect();
    Ok(Dataset::new(examples, dim, 2)?)
}

/// Generate a named synthetic dataset with default settings.
pub fn generate_synthetic(name: &str, n: usize, dim: usize, classes: usize, seed: u64) -> Result<Dataset, IoError> {
    match name {
        "gaussian_blobs" => gaussian_blobs(n, dim, classes, DEFAULT_BLOB_SEPARATION, seed),
        "two_moons_2class" => {
            if classes != 2 {
                return Err(IoError::InvalidSynthetic(format!("two_moons_2class has 2 classes, not {classes}")));
            }
            two_moons(n, dim, seed)
        }
        other => Err(IoError::UnknownGenerator(other.to_string())),
    }
}
