use crate::error::{Result, TensorError};
use crate::kernels;
use crate::tensor::Tensor;

pub const SPECTRAL_MAX_ITERS: usize = 100;
pub const SPECTRAL_TOL: f64 = 1e-10;

/// Budget for [`spectral_norm_fine`].
pub const SPECTRAL_FINE_MAX_ITERS: usize = 20_000;
/// Stop once the right singular vector moves less than this per step.
pub const SPECTRAL_FINE_TOL: f64 = 1e-13;

/// Result of a power-iteration estimate of the largest singular value.
#[derive(Clone, Debug)]
pub struct SpectralEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Unit right singular vector (length `k` for a `d×k` matrix).
    pub right: Vec<f64>,
    /// Unit left singular vector (length `d`); zero when `value` is zero.
    pub left: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    kernels::sum_sq(v).sqrt()
}

/// `M·v` for row-major `M[d×k]`.
fn apply(m: &[f64], v: &[f64], d: usize, k: usize) -> Vec<f64> {
    (0..d)
        .map(|i| m[i * k..(i + 1) * k].iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// `Mᵀ·u` for row-major `M[d×k]`.
fn apply_t(m: &[f64], u: &[f64], d: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k];
    for i in 0..d {
        let ui = u[i];
        for (o, a) in out.iter_mut().zip(&m[i * k..(i + 1) * k]) {
            *o += ui * a;
        }
    }
    out
}

/// Largest singular value of a matrix by power iteration on `MᵀM`.
///
/// Starts from the all-ones vector and falls back to `e₁` if the first
/// iterate vanishes. Stops once successive estimates agree to `tol`
/// relatively; otherwise returns the last iterate with `converged = false`.
pub fn spectral_norm(m: &Tensor, max_iters: usize, tol: f64) -> Result<SpectralEstimate> {
    power_iterate(m, max_iters, |prev, next, _, _| (next - prev).abs() < tol * next)
}

/// Power iteration that stops on the singular vector rather than the
/// value. Used where the estimate feeds a gradient: the value-based rule can
/// fire while the vectors are still far off when σ₁ ≈ σ₂, which makes
/// `u·vᵀ` a poor derivative.
pub fn spectral_norm_fine(m: &Tensor) -> Result<SpectralEstimate> {
    power_iterate(m, SPECTRAL_FINE_MAX_ITERS, |_, _, v0, v1| {
        v0.iter().zip(v1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() < SPECTRAL_FINE_TOL
    })
}

fn power_iterate(
    m: &Tensor,
    max_iters: usize,
    done: impl Fn(f64, f64, &[f64], &[f64]) -> bool,
) -> Result<SpectralEstimate> {
    let (d, k) = m.rows_cols()?;
    if max_iters == 0 {
        return Err(TensorError::Contract("spectral_norm needs max_iters >= 1".into()));
    }
    if !m.is_finite() {
        return Err(TensorError::numeric("spectral_norm", "non-finite entries"));
    }
    let data = m.data();

    let zero = |v: Vec<f64>| SpectralEstimate {
        value: 0.0,
        converged: true,
        iterations: 1,
        right: v,
        left: vec![0.0; d],
    };

    let scale = 1.0 / (k as f64).sqrt();
    let mut v = vec![scale; k];
    let mut mv = apply(data, &v, d, k);
    if norm(&mv) <= f64::MIN_POSITIVE {
        v = vec![0.0; k];
        v[0] = 1.0;
        mv = apply(data, &v, d, k);
        if norm(&mv) <= f64::MIN_POSITIVE {
            // Either M = 0 or e₁ is also in the null space; in the first case
            // zero is exact, in the second try every basis vector.
            let Some(j) = (0..k).find(|&j| (0..d).any(|i| data[i * k + j] != 0.0)) else {
                return Ok(zero(v));
            };
            v = vec![0.0; k];
            v[j] = 1.0;
            mv = apply(data, &v, d, k);
        }
    }

    let mut sigma = norm(&mv);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=max_iters {
        iterations = it;
        let mut w = apply_t(data, &mv, d, k);
        let wn = norm(&w);
        if wn == 0.0 {
            break;
        }
        w.iter_mut().for_each(|x| *x /= wn);
        mv = apply(data, &w, d, k);
        let next = norm(&mv);
        let stop = done(sigma, next, &v, &w);
        v = w;
        sigma = next;
        if stop {
            converged = true;
            break;
        }
    }

    let left = if sigma > 0.0 {
        mv.iter().map(|x| x / sigma).collect()
    } else {
        vec![0.0; d]
    };
    Ok(SpectralEstimate {
        value: sigma,
        converged,
        iterations,
        right: v,
        left,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sn(rows: &[&[f64]]) -> SpectralEstimate {
        spectral_norm(
            &Tensor::from_rows(rows).unwrap(),
            SPECTRAL_MAX_ITERS,
            SPECTRAL_TOL,
        )
        .unwrap()
    }

    #[test]
    fn identity_and_diagonal() {
        let e = spectral_norm(&Tensor::eye(4), SPECTRAL_MAX_ITERS, SPECTRAL_TOL).unwrap();
        assert!((e.value - 1.0).abs() < 1e-12 && e.converged);
        assert!((sn(&[&[3.0, 0.0], &[0.0, 1.0]]).value - 3.0).abs() < 1e-9);
    }

    #[test]
    fn nilpotent_hand_svd() {
        assert!((sn(&[&[0.0, 2.0], &[0.0, 0.0]]).value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn falls_back_when_ones_is_in_null_space() {
        // [1, -1] annihilates the all-ones start vector.
        let e = sn(&[&[1.0, -1.0], &[2.0, -2.0]]);
        assert!((e.value - 10f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix() {
        let e = spectral_norm(&Tensor::zeros(&[3, 2]), 10, 1e-10).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn rejects_nan_and_zero_iters() {
        let m = Tensor::from_rows(&[&[f64::NAN, 1.0]]).unwrap();
        assert!(matches!(spectral_norm(&m, 10, 1e-10), Err(TensorError::Numeric { .. })));
        assert!(spectral_norm(&Tensor::eye(2), 0, 1e-10).is_err());
    }
}
