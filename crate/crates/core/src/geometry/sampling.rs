use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Controls how set-valued objects are estimated near a point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Ball radii, coarse to fine.
    pub radii: Vec<f64>,
    pub samples_per_level: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            radii: vec![1e-2, 1e-3, 1e-4, 1e-5],
            samples_per_level: 64,
            seed: 0x5eed,
        }
    }
}

impl SamplingConfig {
    pub fn finest_radius(&self) -> f64 {
        self.radii.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on (0,1] to avoid ln(0).
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Uniform sample from the closed ball of radius `r` around `x`.
pub fn sample_ball(rng: &mut ChaCha8Rng, x: &DVector<f64>, r: f64) -> DVector<f64> {
    let n = x.len();
    let mut d = DVector::from_fn(n, |_, _| standard_normal(rng));
    let norm = d.norm();
    if norm > 0.0 {
        d /= norm;
    }
    let radius = r * rng.gen::<f64>().powf(1.0 / n as f64);
    x + d * radius
}
