use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::MixSpec;
use crate::error::{LabError, Result};
use crate::lora::{NormKind, RenormMode};
use crate::losses::LossConfig;

/// Which parameters a fine-tuning run may change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinetuneMode {
    DecFull,
    EncFull,
    BothFull,
    EncLora,
    EncRenormLora,
}

impl FinetuneMode {
    pub const ALL: [FinetuneMode; 5] = [
        FinetuneMode::DecFull,
        FinetuneMode::EncFull,
        FinetuneMode::BothFull,
        FinetuneMode::EncLora,
        FinetuneMode::EncRenormLora,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FinetuneMode::DecFull => "dec-full",
            FinetuneMode::EncFull => "enc-full",
            FinetuneMode::BothFull => "both-full",
            FinetuneMode::EncLora => "enc-lora",
            FinetuneMode::EncRenormLora => "enc-renorm-lora",
        }
    }

    pub fn uses_adapters(self) -> bool {
        matches!(self, FinetuneMode::EncLora | FinetuneMode::EncRenormLora)
    }

    pub fn trains_decoder(self) -> bool {
        matches!(self, FinetuneMode::DecFull | FinetuneMode::BothFull)
    }
}

impl fmt::Display for FinetuneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FinetuneMode {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        FinetuneMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| LabError::Config(format!("unknown fine-tuning mode {s:?}")))
    }
}

/// Warmup-then-cosine learning-rate schedule and its step budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    /// Optimizer steps per epoch.
    pub steps_per_epoch: usize,
}

impl Schedule {
    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup_epochs * self.steps_per_epoch
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return Err(LabError::Config(format!(
                "need 0 ≤ lr_min ≤ lr_max (got {} and {})",
                self.lr_min, self.lr_max
            )));
        }
        if self.epochs < self.warmup_epochs || self.epochs == 0 || self.steps_per_epoch == 0 {
            return Err(LabError::Config("need epochs ≥ max(1, warmup_epochs) and steps_per_epoch ≥ 1".into()));
        }
        Ok(())
    }
}

/// Adam moments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Batch shape: `per_step_batch` draws per micro-step, `accumulation_steps`
/// micro-steps per optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub per_step_batch: usize,
    pub accumulation_steps: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            per_step_batch: 2,
            accumulation_steps: 8,
        }
    }
}

impl BatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.per_step_batch == 0 || self.accumulation_steps == 0 {
            return Err(LabError::Config("batch sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub batch: BatchConfig,
    pub adam: AdamConfig,
    pub seed: u64,
    pub mode: FinetuneMode,
    pub replay: bool,
    pub renorm_mode: RenormMode,
    pub norm_kind: NormKind,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub loss: LossConfig,
    pub mix: MixSpec,
    /// Held-out images used for token-norm probes.
    pub probe_images: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: Schedule {
                lr_max: 1e-4,
                lr_min: 1e-6,
                warmup_epochs: 1,
                epochs: 10,
                steps_per_epoch: 10,
            },
            batch: BatchConfig::default(),
            adam: AdamConfig::default(),
            seed: 0,
            mode: FinetuneMode::EncRenormLora,
            replay: true,
            renorm_mode: RenormMode::Functional,
            norm_kind: NormKind::Frobenius,
            lora_rank: 4,
            lora_alpha: 4.0,
            loss: LossConfig::default(),
            mix: MixSpec::default(),
            probe_images: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.batch.validate()?;
        self.loss.validate()?;
        if self.mode.uses_adapters() && (self.lora_rank == 0 || !(self.lora_alpha > 0.0)) {
            return Err(LabError::Config("adapter modes need rank ≥ 1 and alpha > 0".into()));
        }
        if self.mode == FinetuneMode::EncRenormLora && self.renorm_mode == RenormMode::Off {
            return Err(LabError::Config("enc-renorm-lora needs a re-normalization mode other than off".into()));
        }
        Ok(())
    }

    /// Pool weights actually used: replay off keeps only monocular draws.
    pub fn effective_mix(&self) -> MixSpec {
        if self.replay {
            self.mix
        } else {
            MixSpec::MONO_ONLY
        }
    }

    pub fn adapter_renorm(&self) -> RenormMode {
        match self.mode {
            FinetuneMode::EncRenormLora => self.renorm_mode,
            _ => RenormMode::Off,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub schedule: Schedule,
    pub batch: BatchConfig,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Epochs without held-out improvement before stopping.
    pub patience: usize,
    pub loss: LossConfig,
    pub probe_images: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            schedule: Schedule {
                lr_max: 1e-3,
                lr_min: 1e-5,
                warmup_epochs: 1,
                epochs: 12,
                steps_per_epoch: 10,
            },
            // Multi-view draws cost up to 20× a single image; eight per step
            // keeps pretraining near a minute per seed.
            batch: BatchConfig {
                per_step_batch: 1,
                accumulation_steps: 8,
            },
            adam: AdamConfig::default(),
            seed: 0,
            patience: 3,
            loss: LossConfig::default(),
            probe_images: 16,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.batch.validate()?;
        self.loss.validate()?;
        if self.patience == 0 {
            return Err(LabError::Config("patience must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `lr_max`, then cosine decay to `lr_min` at the
/// final step.
pub fn lr_at(step: usize, total_steps: usize, s: &Schedule) -> Result<f64> {
    if step >= total_steps {
        return Err(LabError::Contract(format!("step {step} outside [0, {total_steps})")));
    }
    let warm = s.warmup_steps().min(total_steps - 1);
    if step < warm {
        return Ok(s.lr_max * step as f64 / warm as f64);
    }
    let span = total_steps - 1 - warm;
    if span == 0 {
        return Ok(s.lr_max);
    }
    let progress = (step - warm) as f64 / span as f64;
    Ok(s.lr_min + (s.lr_max - s.lr_min) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}
