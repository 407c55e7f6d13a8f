//! Seeded synthetic scenes, rendered views, affine pseudo-teacher depth and
//! pool sampling.

mod render;
mod sampling;
mod scene;
mod store;
mod teacher;

pub use render::{patch_center, pixel_center, render_view, Rendered};
pub use sampling::{sample_batch, Draw, MixSpec, Pools, MAX_MV_VIEWS, MIN_MV_VIEWS};
pub use scene::{gen_scene, Rect, Scene, SceneConfig, Texture, Wave};
pub use store::{DatasetIndex, IndexEntry};
pub use teacher::make_teacher;

use nalgebra::Vector3;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use renormlab_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::{PinholeCamera, RigidTransform};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pool {
    Mono,
    MvA,
    MvB,
}

impl Pool {
    pub const ALL: [Pool; 3] = [Pool::Mono, Pool::MvA, Pool::MvB];

    fn stream(self) -> u64 {
        match self {
            Pool::Mono => 0,
            Pool::MvA => 1,
            Pool::MvB => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Heldout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub focal: f64,
    pub scene: SceneConfig,
    /// Scene ranges for the second multi-view pool.
    pub scene_b: SceneConfig,
    pub mono_scenes: usize,
    pub mv_a_groups: usize,
    pub mv_b_groups: usize,
    pub views_per_group: usize,
    pub max_rotation_deg: f64,
    pub max_translation: f64,
    pub teacher_noise: f64,
    pub teacher_a: (f64, f64),
    pub teacher_b: (f64, f64),
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            image_size: 32,
            patch_size: 4,
            focal: 32.0,
            scene: SceneConfig::default(),
            scene_b: SceneConfig {
                min_rects: 2,
                waves: 4,
                ..SceneConfig::default()
            },
            mono_scenes: 160,
            mv_a_groups: 8,
            mv_b_groups: 8,
            views_per_group: 8,
            max_rotation_deg: 15.0,
            max_translation: 0.5,
            teacher_noise: 0.01,
            teacher_a: (0.5, 2.0),
            teacher_b: (-0.3, 0.3),
        }
    }
}

impl DataConfig {
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.scene_b.validate()?;
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(LabError::Config("image_size must be a multiple of patch_size".into()));
        }
        if !(self.focal > 0.0) {
            return Err(LabError::Config("focal must be positive".into()));
        }
        if self.views_per_group < MIN_MV_VIEWS {
            return Err(LabError::Config(format!("views_per_group must be ≥ {MIN_MV_VIEWS}")));
        }
        if !(self.teacher_a.0 > 0.0 && self.teacher_a.0 < self.teacher_a.1 && self.teacher_b.0 < self.teacher_b.1) {
            return Err(LabError::Config("teacher affine ranges must be increasing with a > 0".into()));
        }
        Ok(())
    }

    pub fn group_count(&self, pool: Pool) -> usize {
        match pool {
            Pool::Mono => self.mono_scenes,
            Pool::MvA => self.mv_a_groups,
            Pool::MvB => self.mv_b_groups,
        }
    }
}

/// One rendered view with its supervision.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSample {
    /// `[3 × H × W]`
    pub image: Tensor,
    /// `[grid × grid]`, positive.
    pub depth_gt: Tensor,
    /// World → camera.
    pub pose: RigidTransform,
    pub cam: PinholeCamera,
    pub teacher_depth: Tensor,
    pub teacher_affine: (f64, f64),
    pub is_multiview: bool,
    pub group_id: usize,
}

/// Views of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    pub id: usize,
    pub pool: Pool,
    pub scene_seed: u64,
    pub views: Vec<ViewSample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DataConfig,
    pub seed: u64,
    pub split: Split,
    pub groups: Vec<Group>,
}

/// Seed for item `index` of `pool`, on a ChaCha stream separate per split
/// and pool so no two items share a scene.
fn derive_seed(seed: u64, split: Split, pool: Pool, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let split_bit = match split {
        Split::Train => 0,
        Split::Heldout => 1u64 << 40,
    };
    rng.set_stream(split_bit | (pool.stream() << 32) | index as u64);
    rng.next_u64()
}

/// Random pose with camera centre within `max_translation` of the origin and
/// rotation angle at most `max_rotation_deg`.
pub fn random_pose(rng: &mut impl Rng, max_rotation_deg: f64, max_translation: f64) -> RigidTransform {
    let unit = |rng: &mut dyn RngCore| loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    };
    let axis = unit(rng);
    let angle = rng.random_range(0.0..=max_rotation_deg).to_radians();
    let centre = unit(rng) * rng.random_range(0.0..=max_translation);
    let r = RigidTransform::from_axis_angle(axis, angle, Vector3::zeros());
    RigidTransform {
        rotation: r.rotation,
        translation: -(r.rotation * centre),
    }
}

fn make_group(cfg: &DataConfig, pool: Pool, id: usize, scene_seed: u64) -> Result<Group> {
    let scene_cfg = if pool == Pool::MvB { &cfg.scene_b } else { &cfg.scene };
    let scene = gen_scene(scene_seed, scene_cfg)?;
    let cam = PinholeCamera::new(cfg.focal)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
    rng.set_stream(1);
    let nviews = if pool == Pool::Mono { 1 } else { cfg.views_per_group };
    let mut views = Vec::with_capacity(nviews);
    for _ in 0..nviews {
        let pose = random_pose(&mut rng, cfg.max_rotation_deg, cfg.max_translation);
        let r = render_view(&scene, &pose, &cam, cfg.image_size, cfg.patch_size)?;
        let a = rng.random_range(cfg.teacher_a.0..=cfg.teacher_a.1);
        let b = rng.random_range(cfg.teacher_b.0..=cfg.teacher_b.1);
        let teacher = make_teacher(&r.depth_gt, a, b, cfg.teacher_noise, rng.next_u64())?;
        views.push(ViewSample {
            image: r.image,
            depth_gt: r.depth_gt,
            pose,
            cam,
            teacher_depth: teacher,
            teacher_affine: (a, b),
            is_multiview: pool != Pool::Mono,
            group_id: id,
        });
    }
    Ok(Group {
        id,
        pool,
        scene_seed,
        views,
    })
}

impl Dataset {
    /// Deterministic dataset: mono scenes first, then the two multi-view
    /// pools. Group ids are positions in `groups`.
    pub fn generate(cfg: &DataConfig, seed: u64, split: Split) -> Result<Self> {
        cfg.validate()?;
        let mut groups = Vec::new();
        for pool in Pool::ALL {
            for i in 0..cfg.group_count(pool) {
                let id = groups.len();
                groups.push(make_group(cfg, pool, id, derive_seed(seed, split, pool, i))?);
            }
        }
        Ok(Dataset {
            config: cfg.clone(),
            seed,
            split,
            groups,
        })
    }

    pub fn pools(&self) -> Pools {
        let mut p = Pools::default();
        for g in &self.groups {
            let entry = (g.id, g.views.len());
            match g.pool {
                Pool::Mono => p.mono.push(entry),
                Pool::MvA => p.mv_a.push(entry),
                Pool::MvB => p.mv_b.push(entry),
            }
        }
        p
    }

    pub fn groups_in(&self, pool: Pool) -> impl Iterator<Item = &Group> {
        self.groups.iter().filter(move |g| g.pool == pool)
    }

    /// The views a draw refers to, reference first.
    pub fn views_of(&self, draw: &Draw) -> Result<Vec<&ViewSample>> {
        let g = self
            .groups
            .get(draw.group)
            .ok_or_else(|| LabError::Contract(format!("no group {}", draw.group)))?;
        draw.views
            .iter()
            .map(|&v| {
                g.views
                    .get(v)
                    .ok_or_else(|| LabError::Contract(format!("group {} has no view {v}", draw.group)))
            })
            .collect()
    }
}

/// `depth / mean(depth)`.
pub fn mean_normalized(depth: &Tensor) -> Tensor {
    let m = depth.data().iter().sum::<f64>() / depth.numel() as f64;
    depth.scale(1.0 / m)
}

/// Camera-frame patch points of one view: each patch centre unprojected at
/// its patch depth, `[patches × 3]` rows in patch order.
pub fn patch_points(view: &ViewSample, patch: usize, size: usize) -> Vec<Vector3<f64>> {
    let g = size / patch;
    let d = view.depth_gt.data();
    let mut out = Vec::with_capacity(g * g);
    for py in 0..g {
        for px in 0..g {
            let (u, v) = patch_center(py, px, patch, size);
            out.push(view.cam.unproject(u, v, d[py * g + px]));
        }
    }
    out
}

/// Ground-truth pointmaps for `views` in the first view's camera frame,
/// divided by the reference view's mean depth. One `[patches × 3]` tensor
/// per view.
pub fn pointmap_targets(views: &[&ViewSample], patch: usize, size: usize) -> Result<Vec<Tensor>> {
    let reference = views.first().ok_or_else(|| LabError::Contract("no views".into()))?;
    let scale = 1.0 / (reference.depth_gt.data().iter().sum::<f64>() / reference.depth_gt.numel() as f64);
    views
        .iter()
        .map(|v| {
            let to_ref = reference.pose.compose(&v.pose.inverse());
            let pts = patch_points(v, patch, size);
            let data: Vec<f64> = pts
                .iter()
                .flat_map(|p| {
                    let q = to_ref.apply(p) * scale;
                    [q.x, q.y, q.z]
                })
                .collect();
            Ok(Tensor::new(&[pts.len(), 3], data)?)
        })
        .collect()
}
