use std::fs;
use std::path::{Path, PathBuf};

use renormlab_tensor::{load_ften, save_ften, Tensor};
use serde::{Deserialize, Serialize};

use super::{DataConfig, Dataset, Group, Pool, Split, ViewSample};
use crate::error::{LabError, Result};
use crate::geometry::{PinholeCamera, RigidTransform};

/// One row per view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub sample_id: String,
    pub group_id: usize,
    pub view: usize,
    pub pool: Pool,
    pub scene_seed: u64,
    pub teacher_affine: (f64, f64),
    pub pose: RigidTransform,
    pub focal: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub config: DataConfig,
    pub seed: u64,
    pub split: Split,
    pub entries: Vec<IndexEntry>,
}

pub const INDEX_FILE: &str = "index.json";

fn group_file(dir: &Path, id: usize, what: &str) -> PathBuf {
    dir.join("groups").join(format!("{id:05}.{what}.ften"))
}

fn stack(parts: impl Iterator<Item = Tensor>, inner: &[usize]) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut n = 0;
    for t in parts {
        data.extend_from_slice(t.data());
        n += 1;
    }
    let mut shape = vec![n];
    shape.extend_from_slice(inner);
    Ok(Tensor::new(&shape, data)?)
}

fn unstack(t: &Tensor) -> Result<Vec<Tensor>> {
    let inner = &t.shape()[1..];
    let per: usize = inner.iter().product();
    t.data()
        .chunks(per)
        .map(|c| Ok(Tensor::new(inner, c.to_vec())?))
        .collect()
}

impl Dataset {
    pub fn index(&self) -> DatasetIndex {
        let entries = self
            .groups
            .iter()
            .flat_map(|g| {
                g.views.iter().enumerate().map(move |(v, s)| IndexEntry {
                    sample_id: format!("{:05}-{v}", g.id),
                    group_id: g.id,
                    view: v,
                    pool: g.pool,
                    scene_seed: g.scene_seed,
                    teacher_affine: s.teacher_affine,
                    pose: s.pose,
                    focal: s.cam.focal(),
                })
            })
            .collect();
        DatasetIndex {
            config: self.config.clone(),
            seed: self.seed,
            split: self.split,
            entries,
        }
    }

    /// Writes `index.json` and per-group image, depth and teacher tensors.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("groups"))?;
        let s = self.config.image_size;
        let g = self.config.grid();
        for grp in &self.groups {
            save_ften(group_file(dir, grp.id, "images"), &stack(grp.views.iter().map(|v| v.image.clone()), &[3, s, s])?)?;
            save_ften(group_file(dir, grp.id, "depth"), &stack(grp.views.iter().map(|v| v.depth_gt.clone()), &[g, g])?)?;
            save_ften(
                group_file(dir, grp.id, "teacher"),
                &stack(grp.views.iter().map(|v| v.teacher_depth.clone()), &[g, g])?,
            )?;
        }
        fs::write(dir.join(INDEX_FILE), serde_json::to_string_pretty(&self.index())?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index: DatasetIndex = serde_json::from_str(&fs::read_to_string(dir.join(INDEX_FILE))?)?;
        index.config.validate()?;
        let mut groups: Vec<Group> = Vec::new();
        for e in &index.entries {
            if e.group_id == groups.len() {
                groups.push(Group {
                    id: e.group_id,
                    pool: e.pool,
                    scene_seed: e.scene_seed,
                    views: Vec::new(),
                });
            }
            let grp = groups
                .last_mut()
                .filter(|g| g.id == e.group_id && g.views.len() == e.view)
                .ok_or_else(|| LabError::Contract(format!("index entry {} out of order", e.sample_id)))?;
            grp.views.push(ViewSample {
                image: Tensor::zeros(&[0]),
                depth_gt: Tensor::zeros(&[0]),
                pose: e.pose,
                cam: PinholeCamera::new(e.focal)?,
                teacher_depth: Tensor::zeros(&[0]),
                teacher_affine: e.teacher_affine,
                is_multiview: e.pool != Pool::Mono,
                group_id: e.group_id,
            });
        }
        for grp in &mut groups {
            let images = unstack(&load_ften(group_file(dir, grp.id, "images"))?)?;
            let depth = unstack(&load_ften(group_file(dir, grp.id, "depth"))?)?;
            let teacher = unstack(&load_ften(group_file(dir, grp.id, "teacher"))?)?;
            if images.len() != grp.views.len() || depth.len() != grp.views.len() || teacher.len() != grp.views.len() {
                return Err(LabError::Contract(format!("group {} tensors disagree with the index", grp.id)));
            }
            for (((v, i), d), t) in grp.views.iter_mut().zip(images).zip(depth).zip(teacher) {
                v.image = i;
                v.depth_gt = d;
                v.teacher_depth = t;
            }
        }
        Ok(Dataset {
            config: index.config,
            seed: index.seed,
            split: index.split,
            groups,
        })
    }
}
