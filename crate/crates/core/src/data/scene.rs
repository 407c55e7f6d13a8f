use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Geometry and appearance ranges for generated scenes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub z_min: f64,
    pub z_max: f64,
    pub min_rects: usize,
    pub max_rects: usize,
    /// Sinusoids in the background height field.
    pub waves: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            z_min: 1.0,
            z_max: 8.0,
            min_rects: 1,
            max_rects: 4,
            waves: 3,
        }
    }
}

impl SceneConfig {
    /// Clearance kept between the nearest background point and any
    /// foreground rectangle.
    pub const FOREGROUND_GAP: f64 = 0.5;
    /// Total height-field relief.
    pub const RELIEF: f64 = 1.0;

    pub fn validate(&self) -> Result<()> {
        if !(self.z_min > 0.0 && self.z_max.is_finite()) {
            return Err(LabError::Config("scene depths must be positive and finite".into()));
        }
        if self.z_max - 1.0 - 2.0 * Self::RELIEF - Self::FOREGROUND_GAP < self.z_min {
            return Err(LabError::Config(format!(
                "depth range [{}, {}] leaves no room for foreground",
                self.z_min, self.z_max
            )));
        }
        if self.min_rects > self.max_rects {
            return Err(LabError::Config("min_rects > max_rects".into()));
        }
        Ok(())
    }
}

/// `amp · sin(kx·x + ky·y + phase)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub amp: f64,
    pub kx: f64,
    pub ky: f64,
    pub phase: f64,
}

impl Wave {
    fn eval(&self, x: f64, y: f64) -> f64 {
        self.amp * (self.kx * x + self.ky * y + self.phase).sin()
    }

    fn random(rng: &mut impl Rng, amp: f64, k: (f64, f64)) -> Self {
        let kmag = rng.random_range(k.0..k.1);
        let ang = rng.random_range(0.0..std::f64::consts::TAU);
        Wave {
            amp,
            kx: kmag * ang.cos(),
            ky: kmag * ang.sin(),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }
}

/// Smooth colour: per channel, a base level plus sinusoids, clamped to [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub base: [f64; 3],
    pub waves: [Vec<Wave>; 3],
}

impl Texture {
    fn random(rng: &mut impl Rng, k: (f64, f64)) -> Self {
        let base = [0; 3].map(|_| rng.random_range(0.25..0.75));
        let waves = [0; 3].map(|_| (0..3).map(|_| Wave::random(rng, 0.12, k)).collect());
        Texture { base, waves }
    }

    pub fn color(&self, x: f64, y: f64) -> [f64; 3] {
        let mut c = [0.0; 3];
        for ch in 0..3 {
            let v = self.base[ch] + self.waves[ch].iter().map(|w| w.eval(x, y)).sum::<f64>();
            c[ch] = v.clamp(0.0, 1.0);
        }
        c
    }
}

/// Fronto-parallel rectangle on the plane `z = depth` (world frame).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub depth: f64,
    pub texture: Texture,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// A height field `z = h(x, y)` seen from near the origin looking along
/// +z, with floating rectangles in front of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    pub base_depth: f64,
    pub waves: Vec<Wave>,
    pub texture: Texture,
    pub rects: Vec<Rect>,
}

impl Scene {
    pub fn height(&self, x: f64, y: f64) -> f64 {
        self.base_depth + self.waves.iter().map(|w| w.eval(x, y)).sum::<f64>()
    }

    /// Lower bound of the height field.
    pub fn background_min(&self) -> f64 {
        self.base_depth - self.waves.iter().map(|w| w.amp.abs()).sum::<f64>()
    }

    pub fn background_max(&self) -> f64 {
        self.base_depth + self.waves.iter().map(|w| w.amp.abs()).sum::<f64>()
    }
}

/// Deterministic scene for `seed`.
pub fn gen_scene(seed: u64, cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let relief = SceneConfig::RELIEF;
    let base_depth = rng.random_range(cfg.z_max - relief - 1.0..=cfg.z_max - relief);
    let waves: Vec<Wave> = (0..cfg.waves)
        .map(|_| Wave::random(&mut rng, relief / cfg.waves as f64, (0.3, 1.5)))
        .collect();
    let texture = Texture::random(&mut rng, (2.0, 6.0));
    let mut scene = Scene {
        seed,
        base_depth,
        waves,
        texture,
        rects: Vec::new(),
    };
    let far = scene.background_min() - SceneConfig::FOREGROUND_GAP;
    let count = rng.random_range(cfg.min_rects..=cfg.max_rects);
    for _ in 0..count {
        let depth = rng.random_range(cfg.z_min..far);
        // Sized and placed relative to the view half-width at that depth.
        let cx = rng.random_range(-0.35..0.35) * depth;
        let cy = rng.random_range(-0.35..0.35) * depth;
        let hw = rng.random_range(0.08..0.25) * depth;
        let hh = rng.random_range(0.08..0.25) * depth;
        let texture = Texture::random(&mut rng, (3.0, 8.0));
        scene.rects.push(Rect {
            x0: cx - hw,
            x1: cx + hw,
            y0: cy - hh,
            y1: cy + hh,
            depth,
            texture,
        });
    }
    Ok(scene)
}
