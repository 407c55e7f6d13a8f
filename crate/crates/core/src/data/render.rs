use nalgebra::Vector3;
use renormlab_tensor::Tensor;

use super::scene::Scene;
use crate::error::{LabError, Result};
use crate::geometry::{PinholeCamera, RigidTransform};

const MARCH_STEP: f64 = 0.05;
const BISECT_ITERS: usize = 50;
/// Attenuation of colour with camera depth, a weak monocular depth cue.
const FOG: f64 = 0.08;

/// A rendered view: image, patch-resolution depth and per-pixel depth.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    /// `[3 × H × W]`
    pub image: Tensor,
    /// `[H/patch × W/patch]`, mean camera depth over each patch.
    pub depth_gt: Tensor,
    /// `[H × W]`
    pub pixel_depth: Tensor,
}

/// Pixel-centre coordinates relative to the principal point at the image
/// centre.
pub fn pixel_center(row: usize, col: usize, size: usize) -> (f64, f64) {
    let h = size as f64 / 2.0;
    (col as f64 + 0.5 - h, row as f64 + 0.5 - h)
}

/// Centre of patch `(py, px)` in the same coordinates.
pub fn patch_center(py: usize, px: usize, patch: usize, size: usize) -> (f64, f64) {
    let h = size as f64 / 2.0;
    let p = patch as f64;
    ((px as f64 + 0.5) * p - h, (py as f64 + 0.5) * p - h)
}

struct Hit {
    depth: f64,
    color: [f64; 3],
}

fn trace(scene: &Scene, origin: &Vector3<f64>, dir: &Vector3<f64>, max_t: f64) -> Result<Hit> {
    if dir.z <= 0.0 {
        return Err(LabError::DegenerateGeometry("ray does not face the scene".into()));
    }
    let g = |t: f64| {
        let p = origin + dir * t;
        p.z - scene.height(p.x, p.y)
    };
    let mut best: Option<(f64, [f64; 3])> = None;
    for r in &scene.rects {
        let t = (r.depth - origin.z) / dir.z;
        if t > 0.0 {
            let p = origin + dir * t;
            if r.contains(p.x, p.y) && best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, r.texture.color(p.x, p.y)));
            }
        }
    }
    // Height field: first sign change of g, refined by bisection.
    let mut lo = 0.0;
    let mut hi = None;
    let mut t = MARCH_STEP;
    while t <= max_t {
        if g(t) >= 0.0 {
            hi = Some(t);
            break;
        }
        lo = t;
        t += MARCH_STEP;
    }
    let mut hi = hi.ok_or_else(|| LabError::DegenerateGeometry("ray leaves the scene".into()))?;
    for _ in 0..BISECT_ITERS {
        let mid = 0.5 * (lo + hi);
        if g(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let p = origin + dir * hi;
    if best.is_none_or(|(bt, _)| hi < bt) {
        best = Some((hi, scene.texture.color(p.x, p.y)));
    }
    let (t, color) = best.expect("background always hit");
    Ok(Hit { depth: t, color })
}

/// Ray-traces `scene` from `pose` (world → camera) at `size × size`
/// pixels. Errors if the camera sits inside the height field.
pub fn render_view(scene: &Scene, pose: &RigidTransform, cam: &PinholeCamera, size: usize, patch: usize) -> Result<Rendered> {
    if patch == 0 || size % patch != 0 {
        return Err(LabError::Config(format!("image size {size} not divisible by patch {patch}")));
    }
    let inv = pose.inverse();
    let origin = inv.translation;
    if origin.z >= scene.height(origin.x, origin.y) {
        return Err(LabError::DegenerateGeometry("camera inside the scene geometry".into()));
    }
    let max_t = 4.0 * scene.background_max();
    let mut image = vec![0.0; 3 * size * size];
    let mut depth = vec![0.0; size * size];
    for row in 0..size {
        for col in 0..size {
            let (u, v) = pixel_center(row, col, size);
            // Camera ray with unit z so the hit parameter is camera depth.
            let d_cam = Vector3::new(u / cam.focal(), v / cam.focal(), 1.0);
            let hit = trace(scene, &origin, &(inv.rotation * d_cam), max_t)?;
            let att = (-FOG * (hit.depth - 1.0).max(0.0)).exp();
            for ch in 0..3 {
                image[ch * size * size + row * size + col] = hit.color[ch] * att;
            }
            depth[row * size + col] = hit.depth;
        }
    }
    let g = size / patch;
    let mut pd = vec![0.0; g * g];
    for row in 0..size {
        for col in 0..size {
            pd[(row / patch) * g + col / patch] += depth[row * size + col];
        }
    }
    let n = (patch * patch) as f64;
    pd.iter_mut().for_each(|d| *d /= n);
    Ok(Rendered {
        image: Tensor::new(&[3, size, size], image)?,
        depth_gt: Tensor::new(&[g, g], pd)?,
        pixel_depth: Tensor::new(&[size, size], depth)?,
    })
}
