use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use renormlab_tensor::Tensor;

use crate::error::{LabError, Result};

/// Affine-perturbed pseudo-teacher: `a·gt + b + N(0, noise_std²)`.
pub fn make_teacher(depth_gt: &Tensor, a: f64, b: f64, noise_std: f64, seed: u64) -> Result<Tensor> {
    if !(a > 0.0) || !b.is_finite() || !(noise_std >= 0.0) {
        return Err(LabError::Config(format!("teacher needs a > 0 and noise ≥ 0 (a {a}, b {b}, noise {noise_std})")));
    }
    let min = depth_gt.data().iter().copied().fold(f64::INFINITY, f64::min);
    if !(a * min + b - 3.0 * noise_std > 0.0) {
        return Err(LabError::Config(format!(
            "teacher depth may go non-positive: a·min(gt) + b − 3σ = {}",
            a * min + b - 3.0 * noise_std
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std).map_err(|e| LabError::Config(e.to_string()))?;
    let data = depth_gt
        .data()
        .iter()
        .map(|&d| a * d + b + if noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 })
        .collect();
    Ok(Tensor::new(depth_gt.shape(), data)?)
}
