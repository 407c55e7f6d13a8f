//! Projection error under a multiplicative depth-scale perturbation.
//!
//! A point `p` is scaled to `(1+δ)p` before the rigid transform to the
//! second camera. The horizontal image shift is
//!
//! ```text
//! Δu = δ·f·(X₂·Tz − Tx·Z₂) / (Z₂·(Z₂ + δ·(Z₂ − Tz)))
//!    ≈ δ·f·(c·Tz − Tx) / Z₂,        c = X₂ / Z₂
//! ```
//!
//! so for a fixed lateral ratio the dispersion falls off as `1/Z₂`: near
//! geometry is smeared much more than far geometry.

use nalgebra::Vector3;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::{PinholeCamera, RigidTransform};
use crate::stats::{mean, sample_std};

/// `δ ~ N(0, σ²)`, or a fixed `δ` when `delta` is set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalePerturbation {
    pub sigma: f64,
    pub delta: Option<f64>,
}

impl ScalePerturbation {
    pub fn new(sigma: f64, delta: Option<f64>) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(LabError::Config(format!("sigma must be non-negative, got {sigma}")));
        }
        Ok(ScalePerturbation { sigma, delta })
    }
}

/// Coefficients of the first-order linearization: `a = X₂ − Tx`,
/// `b = Z₂ − Tz` (the first and third components of `R·p`) and the
/// lateral ratio `c = X₂ / Z₂` of the unperturbed point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpipolarCoefficients {
    pub a_coef: f64,
    pub b_coef: f64,
    pub c_ratio: f64,
}

impl EpipolarCoefficients {
    pub fn from_geometry(p: &Vector3<f64>, rt: &RigidTransform) -> Result<Self> {
        let rp = rt.rotation * p;
        let p2 = rp + rt.translation;
        if !(p2.z > 0.0) {
            return Err(LabError::BehindCamera(p2.z));
        }
        Ok(EpipolarCoefficients {
            a_coef: rp.x,
            b_coef: rp.z,
            c_ratio: p2.x / p2.z,
        })
    }
}

pub fn transform_point(p: &Vector3<f64>, rt: &RigidTransform) -> Vector3<f64> {
    rt.apply(p)
}

pub fn project(p2: &Vector3<f64>, cam: &PinholeCamera) -> Result<(f64, f64)> {
    cam.project(p2)
}

/// `u((1+δ)p) − u(p)` by two full projections, with no simplification.
///
/// Evaluated in exact rational arithmetic from the f64 inputs and rounded
/// once: a plain f64 difference of two nearly equal projections loses
/// digits in proportion to `|u| / |Δu|`.
pub fn delta_u_bruteforce(p: &Vector3<f64>, rt: &RigidTransform, f: f64, delta: f64) -> Result<f64> {
    PinholeCamera::new(f)?;
    let q = |x: f64| {
        BigRational::from_float(x).ok_or_else(|| LabError::Contract(format!("non-finite input {x}")))
    };
    let scale = BigRational::one() + q(delta)?;
    let transformed = |s: &BigRational| -> Result<[BigRational; 3]> {
        let mut out = [q(rt.translation.x)?, q(rt.translation.y)?, q(rt.translation.z)?];
        for (i, o) in out.iter_mut().enumerate() {
            for j in 0..3 {
                *o += q(rt.rotation[(i, j)])? * s * q(p[j])?;
            }
        }
        Ok(out)
    };
    let u = |pt: [BigRational; 3]| -> Result<BigRational> {
        if !pt[2].is_positive() {
            return Err(LabError::BehindCamera(pt[2].to_f64().unwrap_or(f64::NAN)));
        }
        Ok(q(f)? * &pt[0] / &pt[2])
    };
    let u0 = u(transformed(&BigRational::one())?)?;
    let u1 = u(transformed(&scale)?)?;
    (u1 - u0)
        .to_f64()
        .ok_or_else(|| LabError::DegenerateGeometry("Δu not representable".into()))
}

/// `a·b` as an unevaluated sum `hi + lo`.
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Compensated dot product, as accurate as if computed in twice the
/// working precision; returned unrounded as `hi + lo`.
fn dot2(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let (mut hi, mut lo) = (0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (p, e) = two_prod(x, y);
        let (s, q) = two_sum(hi, p);
        hi = s;
        lo += q + e;
    }
    (hi, lo)
}

/// The exact rational form of `Δu`.
///
/// With `a, b` the first and third components of `R·p`, the numerator
/// `X₂·Tz − Tx·Z₂` reduces to `a·Tz − Tx·b` and `Z₂ − Tz` to `b`; both are
/// evaluated with compensated products so cancellation costs no accuracy.
pub fn delta_u_closed_form(p: &Vector3<f64>, rt: &RigidTransform, f: f64, delta: f64) -> Result<f64> {
    PinholeCamera::new(f)?;
    let row = |i: usize| [rt.rotation[(i, 0)], rt.rotation[(i, 1)], rt.rotation[(i, 2)]];
    let pv = [p.x, p.y, p.z];
    let (a_hi, a_lo) = dot2(&row(0), &pv);
    let (b_hi, b_lo) = dot2(&row(2), &pv);
    let (tx, tz) = (rt.translation.x, rt.translation.z);
    let z2 = b_hi + (b_lo + tz);
    let z_pert = z2 + delta * (b_hi + b_lo);
    if !(z2 > 0.0) {
        return Err(LabError::BehindCamera(z2));
    }
    if !(z_pert > 0.0) {
        return Err(LabError::BehindCamera(z_pert));
    }
    let (n_hi, n_lo) = dot2(&[a_hi, a_lo, b_hi, b_lo], &[tz, tz, -tx, -tx]);
    Ok(delta * f * (n_hi + n_lo) / (z2 * z_pert))
}

/// First-order approximation `δ·f·(c·Tz − Tx)/Z₂`.
pub fn delta_u_approx(coeffs: &EpipolarCoefficients, rt: &RigidTransform, f: f64, delta: f64, z2: f64) -> Result<f64> {
    if !(z2 > 0.0) {
        return Err(LabError::BehindCamera(z2));
    }
    let (tx, tz) = (rt.translation.x, rt.translation.z);
    Ok(delta * f * (coeffs.c_ratio * tz - tx) / z2)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersionStats {
    pub std_delta_u: f64,
    pub mean_delta_u: f64,
    pub accepted: usize,
    pub rejected: usize,
}

/// Monte-Carlo statistics of `Δu` over `δ ~ N(0, σ²)`.
///
/// Draws whose perturbed depth is not positive are rejected and counted;
/// more than half rejected means the geometry is unsuitable for the study.
pub fn dispersion_mc(
    p: &Vector3<f64>,
    rt: &RigidTransform,
    f: f64,
    sigma: f64,
    n_samples: usize,
    seed: u64,
) -> Result<DispersionStats> {
    ScalePerturbation::new(sigma, None)?;
    if n_samples < 2 {
        return Err(LabError::Config("dispersion needs at least 2 samples".into()));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| LabError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n_samples);
    let mut rejected = 0;
    for _ in 0..n_samples {
        let delta = normal.sample(&mut rng);
        match delta_u_closed_form(p, rt, f, delta) {
            Ok(du) => values.push(du),
            Err(LabError::BehindCamera(_)) if rt.apply(p).z > 0.0 => rejected += 1,
            Err(e) => return Err(e),
        }
    }
    if 2 * rejected > n_samples || values.len() < 2 {
        return Err(LabError::DegenerateGeometry(format!(
            "{rejected} of {n_samples} perturbed points fell behind the camera"
        )));
    }
    Ok(DispersionStats {
        std_delta_u: sample_std(&values).expect("≥ 2 samples"),
        mean_delta_u: mean(&values).expect("non-empty"),
        accepted: values.len(),
        rejected,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(LabError::Contract("slope fit needs ≥ 2 paired values".into()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(LabError::DegenerateGeometry("log-log fit over non-positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = mean(&lx).expect("non-empty");
    let my = mean(&ly).expect("non-empty");
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(LabError::DegenerateGeometry("all depths identical".into()));
    }
    Ok(sxy / sxx)
}

/// One dispersion measurement per depth, at lateral ratio `c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersionRow {
    pub z2: f64,
    pub sigma: f64,
    pub n: usize,
    pub std: f64,
    pub mean: f64,
    pub rejected: usize,
}

impl DispersionRow {
    pub const CSV_HEADER: &'static str = "Z2,sigma,n,std,mean,rejected";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:e},{:e},{}",
            self.z2, self.sigma, self.n, self.std, self.mean, self.rejected
        )
    }
}

/// Point whose second-camera coordinates are `(c·Z₂, 0, Z₂)`.
pub fn point_at_depth(z2: f64, c: f64, rt: &RigidTransform) -> Vector3<f64> {
    rt.inverse().apply(&Vector3::new(c * z2, 0.0, z2))
}

/// Runs the dispersion study at each depth and returns the rows.
pub fn dispersion_sweep(
    depths: &[f64],
    c: f64,
    rt: &RigidTransform,
    f: f64,
    sigma: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<DispersionRow>> {
    depths
        .iter()
        .enumerate()
        .map(|(i, &z2)| {
            let p = point_at_depth(z2, c, rt);
            let s = dispersion_mc(&p, rt, f, sigma, n, seed.wrapping_add(i as u64))?;
            Ok(DispersionRow {
                z2,
                sigma,
                n,
                std: s.std_delta_u,
                mean: s.mean_delta_u,
                rejected: s.rejected,
            })
        })
        .collect()
}

/// Exponent of `std(Δu) ∝ Z₂^k` fitted over a depth sweep; near −1.
pub fn depth_scaling_fit(
    depths: &[f64],
    c: f64,
    rt: &RigidTransform,
    f: f64,
    sigma: f64,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let mut distinct = depths.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(LabError::Config("depth sweep needs ≥ 3 distinct depths".into()));
    }
    if !(distinct[0] > 0.0) || distinct[distinct.len() - 1] < 4.0 * distinct[0] {
        return Err(LabError::Config("depth sweep must span at least a 4× range".into()));
    }
    let rows = dispersion_sweep(depths, c, rt, f, sigma, n, seed)?;
    if let Some(r) = rows.iter().find(|r| !(r.std > 0.0)) {
        return Err(LabError::DegenerateGeometry(format!(
            "zero dispersion at depth {}",
            r.z2
        )));
    }
    let stds: Vec<f64> = rows.iter().map(|r| r.std).collect();
    log_log_slope(depths, &stds)
}

/// Seeded geometry with both the point and its perturbed copy at least
/// `0.2` in front of the second camera.
pub fn random_geometry<R: Rng>(rng: &mut R) -> (Vector3<f64>, RigidTransform, f64, f64) {
    let unit = |r: &mut R| Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
    loop {
        let axis = unit(rng);
        let angle = rng.random_range(-0.6..0.6);
        let t = unit(rng);
        let rt = RigidTransform::from_axis_angle(axis, angle, t);
        let p = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.5..10.0));
        let f = rng.random_range(0.5..3.0);
        let delta = rng.random_range(-0.2..0.2);
        if rt.apply(&p).z > 0.2 && rt.apply(&(p * (1.0 + delta))).z > 0.2 {
            return (p, rt, f, delta);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactnessReport {
    pub cases: usize,
    pub worst_relative_gap: f64,
    /// Largest |Δu| over every path when the translation is zero.
    pub worst_zero_translation: f64,
    pub worked_example: f64,
}

impl ExactnessReport {
    pub const GAP_TOL: f64 = 1e-12;
    pub const ZERO_TOL: f64 = 1e-15;
    pub const EXAMPLE_VALUE: f64 = -0.005_411_3;
    pub const EXAMPLE_TOL: f64 = 1e-6;

    pub fn passed(&self) -> bool {
        self.worst_relative_gap <= Self::GAP_TOL
            && self.worst_zero_translation < Self::ZERO_TOL
            && (self.worked_example - Self::EXAMPLE_VALUE).abs() <= Self::EXAMPLE_TOL
    }
}

/// Closed form against brute force on `cases` seeded geometries, the same
/// geometries with the translation removed, and the worked example
/// `R = I, T = (0.3, 0, 0.1), p = (1, 0, 2), f = 1, δ = 0.05`.
pub fn exactness_sweep(cases: usize, seed: u64) -> Result<ExactnessReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gap: f64 = 0.0;
    let mut zero: f64 = 0.0;
    for _ in 0..cases {
        let (p, rt, f, delta) = random_geometry(&mut rng);
        let b = delta_u_bruteforce(&p, &rt, f, delta)?;
        let c = delta_u_closed_form(&p, &rt, f, delta)?;
        let scale = b.abs().max(c.abs());
        if scale > 0.0 {
            gap = gap.max((b - c).abs() / scale);
        }
        let rot = RigidTransform::new(rt.rotation, Vector3::zeros())?;
        let z2 = rot.apply(&p).z;
        if z2 > 0.0 && z2 * (1.0 + delta) > 0.0 {
            let coeffs = EpipolarCoefficients::from_geometry(&p, &rot)?;
            for v in [
                delta_u_bruteforce(&p, &rot, f, delta)?,
                delta_u_closed_form(&p, &rot, f, delta)?,
                delta_u_approx(&coeffs, &rot, f, delta, z2)?,
            ] {
                zero = zero.max(v.abs());
            }
        }
    }
    let rt = RigidTransform::new(nalgebra::Matrix3::identity(), Vector3::new(0.3, 0.0, 0.1))?;
    let worked_example = delta_u_closed_form(&Vector3::new(1.0, 0.0, 2.0), &rt, 1.0, 0.05)?;
    Ok(ExactnessReport {
        cases,
        worst_relative_gap: gap,
        worst_zero_translation: zero,
        worked_example,
    })
}
