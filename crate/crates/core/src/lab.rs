//! Run configuration and the per-directory run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DataConfig;
use crate::error::{LabError, Result};
use crate::model::ModelConfig;
use crate::train::{PretrainConfig, TrainConfig};

/// Peak fine-tuning learning rate for the default desk-scale runs.
pub const DESK_FINETUNE_LR: f64 = 5e-4;

/// Sizes of the held-out split; everything else follows the training data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeldoutSize {
    pub mono_scenes: usize,
    pub mv_a_groups: usize,
    pub mv_b_groups: usize,
}

impl Default for HeldoutSize {
    fn default() -> Self {
        HeldoutSize {
            mono_scenes: 40,
            mv_a_groups: 4,
            mv_b_groups: 4,
        }
    }
}

/// Everything a run reads besides its inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub heldout: HeldoutSize,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
}

impl Default for LabConfig {
    fn default() -> Self {
        let mut train = TrainConfig::default();
        train.schedule.lr_max = DESK_FINETUNE_LR;
        LabConfig {
            seed: 0,
            data: DataConfig::default(),
            heldout: HeldoutSize::default(),
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            train,
        }
    }
}

impl LabConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn heldout_data(&self) -> DataConfig {
        DataConfig {
            mono_scenes: self.heldout.mono_scenes,
            mv_a_groups: self.heldout.mv_a_groups,
            mv_b_groups: self.heldout.mv_b_groups,
            ..self.data.clone()
        }
    }

    /// Routes the single seed into every consumer.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.pretrain.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.heldout_data().validate()?;
        self.model.validate()?;
        self.pretrain.validate()?;
        self.train.validate()?;
        let enc = &self.model.encoder;
        if enc.image_size != self.data.image_size || enc.patch_size != self.data.patch_size {
            return Err(LabError::Config(format!(
                "model expects {}px images with {}px patches, data has {}px with {}px",
                enc.image_size, enc.patch_size, self.data.image_size, self.data.patch_size
            )));
        }
        Ok(())
    }

    pub fn digest(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(serde_json::to_vec(self)?)))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// SHA-256 of a file, or of a directory's sorted relative paths and file
/// digests. A manifest inside the directory is skipped.
pub fn digest_path(path: &Path) -> Result<String> {
    if path.is_file() {
        return Ok(hex(&Sha256::digest(fs::read(path)?)));
    }
    let mut files = Vec::new();
    collect_files(path, path, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(digest_path(&path.join(&rel))?.as_bytes());
        h.update([b'\n']);
    }
    Ok(hex(&h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if !dir.is_dir() {
        return Err(LabError::Config(format!("{} does not exist", dir.display())));
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path.file_name().is_some_and(|n| n != MANIFEST_FILE) {
            out.push(path.strip_prefix(root).expect("walk stays under root").to_path_buf());
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigestedPath {
    pub path: PathBuf,
    pub sha256: String,
}

impl DigestedPath {
    fn at(base: &Path, path: PathBuf) -> Result<Self> {
        let sha256 = digest_path(&base.join(&path))?;
        Ok(DigestedPath { path, sha256 })
    }

    fn verify(&self, base: &Path, what: &str) -> Result<()> {
        let found = digest_path(&base.join(&self.path))?;
        if found != self.sha256 {
            return Err(LabError::Checksum {
                what: format!("{what} {}", self.path.display()),
                expected: self.sha256.clone(),
                found,
            });
        }
        Ok(())
    }
}

/// `manifest.json`: one per output directory.
///
/// Datasets and other inputs are stored as absolute paths; artifact paths
/// are relative to the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command_line: Vec<String>,
    pub config_digest: String,
    pub config: LabConfig,
    pub seeds: BTreeMap<String, u64>,
    pub datasets: BTreeMap<String, DigestedPath>,
    /// Checkpoints and logs read by the run.
    pub inputs: BTreeMap<String, DigestedPath>,
    pub artifacts: BTreeMap<String, DigestedPath>,
    pub checks: BTreeMap<String, bool>,
}

impl RunManifest {
    pub fn new(command_line: Vec<String>, config: &LabConfig) -> Result<Self> {
        Ok(RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command_line,
            config_digest: config.digest()?,
            config: config.clone(),
            seeds: BTreeMap::from([("seed".to_string(), config.seed)]),
            datasets: BTreeMap::new(),
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            checks: BTreeMap::new(),
        })
    }

    pub fn add_dataset(&mut self, name: &str, path: &Path) -> Result<()> {
        self.datasets.insert(name.into(), DigestedPath::at(Path::new(""), fs::canonicalize(path)?)?);
        Ok(())
    }

    pub fn add_input(&mut self, name: &str, path: &Path) -> Result<()> {
        self.inputs.insert(name.into(), DigestedPath::at(Path::new(""), fs::canonicalize(path)?)?);
        Ok(())
    }

    /// `rel` is relative to `out`.
    pub fn add_artifact(&mut self, name: &str, out: &Path, rel: impl Into<PathBuf>) -> Result<()> {
        self.artifacts.insert(name.into(), DigestedPath::at(out, rel.into())?);
        Ok(())
    }

    pub fn passed(&self) -> bool {
        self.checks.values().all(|&ok| ok)
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Reads `dir/manifest.json` and recomputes every digest in it.
    pub fn read(dir: &Path) -> Result<Self> {
        let m: RunManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        let digest = m.config.digest()?;
        if digest != m.config_digest {
            return Err(LabError::Checksum {
                what: "config".into(),
                expected: m.config_digest,
                found: digest,
            });
        }
        for (name, d) in &m.datasets {
            d.verify(Path::new(""), &format!("dataset {name}"))?;
        }
        for (name, d) in &m.inputs {
            d.verify(Path::new(""), &format!("input {name}"))?;
        }
        for (name, d) in &m.artifacts {
            d.verify(dir, &format!("artifact {name}"))?;
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_consistent_and_round_trips() {
        let c = LabConfig::default();
        c.validate().unwrap();
        assert_eq!(LabConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        assert_eq!(LabConfig::from_toml("").unwrap(), c);
        let partial = LabConfig::from_toml("seed = 4\n[data]\nmono_scenes = 10\n").unwrap();
        assert_eq!(partial.data.mono_scenes, 10);
        assert_eq!(partial.data.image_size, c.data.image_size);
        assert_ne!(partial.digest().unwrap(), c.digest().unwrap());
    }

    #[test]
    fn mismatched_image_size_is_rejected() {
        let mut c = LabConfig::default();
        c.data.image_size = 16;
        c.data.focal = 16.0;
        assert!(matches!(c.validate(), Err(LabError::Config(_))));
    }
}
