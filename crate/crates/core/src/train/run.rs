use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use renormlab_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::{lr_at, AdamConfig, BatchConfig, FinetuneMode, PretrainConfig, Schedule, TrainConfig};
use super::eval::{drift_report, eval_depth, eval_multiview, probe_images, DriftReport};
use super::step::{batch_gradients, draw_images, DepthSource, LossSums};
use crate::data::{sample_batch, Dataset, MixSpec, Pools};
use crate::error::{LabError, Result};
use crate::losses::LossConfig;
use crate::model::ModelState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    /// Mean objective over the step's images.
    pub loss: f64,
    pub distill: f64,
    pub pointmap: f64,
    pub images: usize,
    /// Largest adapter norm drift after the update; absent without adapters.
    pub max_norm_drift: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub tokens: DriftReport,
    pub heldout_pointmap_mse: f64,
    pub heldout_rel: f64,
    pub heldout_delta1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LogRecord {
    Config { run: String, config: serde_json::Value },
    Step(StepRecord),
    Epoch(EpochRecord),
    Final { epochs_run: usize, best_epoch: usize, decoder_checksum: String },
}

/// Append-only record of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
}

impl RunLog {
    pub fn push(&mut self, r: LogRecord) {
        self.records.push(r);
    }

    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Step(s) => Some(s),
            _ => None,
        })
    }

    pub fn epochs(&self) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Epoch(e) => Some(e),
            _ => None,
        })
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let records = fs::read_to_string(path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(RunLog { records })
    }
}

/// Seed for micro-batch `micro` of optimizer step `step`.
fn micro_seed(seed: u64, step: usize, micro: usize, accumulation: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((step * accumulation + micro) as u64);
    rng.next_u64()
}

struct Loop<'a> {
    schedule: Schedule,
    batch: BatchConfig,
    adam: AdamConfig,
    seed: u64,
    loss: LossConfig,
    mix: MixSpec,
    depth_source: DepthSource,
    train: &'a Dataset,
    pools: Pools,
}

impl Loop<'_> {
    /// One optimizer step: accumulate micro-batch gradients, then update.
    fn step(&self, state: &mut ModelState, adam: &mut Adam, step: usize) -> Result<(f64, f64, LossSums)> {
        let acc = self.batch.accumulation_steps;
        let micro: Vec<_> = (0..acc)
            .map(|m| sample_batch(&self.pools, self.mix, self.batch.per_step_batch, micro_seed(self.seed, step, m, acc)))
            .collect::<Result<_>>()?;
        let n_total: usize = micro.iter().map(|d| draw_images(d)).sum();
        let mut grads = BTreeMap::new();
        let mut objective = 0.0;
        let mut sums = LossSums::default();
        for draws in &micro {
            let (o, s) = batch_gradients(state, self.train, draws, self.depth_source, &self.loss, n_total, &mut grads)?;
            objective += o;
            sums.add(&s);
        }
        let lr = lr_at(step, self.schedule.total_steps(), &self.schedule)?;
        adam.step(state, &grads, lr)?;
        Ok((lr, objective, sums))
    }

    fn run(
        &self,
        state: &mut ModelState,
        heldout: &Dataset,
        probes: usize,
        log: &mut RunLog,
        mut after_epoch: impl FnMut(&ModelState, &EpochRecord) -> bool,
    ) -> Result<usize> {
        let mut adam = Adam::new(self.adam);
        let probe = probe_images(heldout, probes);
        let mut epochs_run = 0;
        for epoch in 0..self.schedule.epochs {
            for k in 0..self.schedule.steps_per_epoch {
                let step = epoch * self.schedule.steps_per_epoch + k;
                let (lr, objective, sums) = self.step(state, &mut adam, step)?;
                let max_norm_drift = if state.adapters.is_empty() {
                    None
                } else {
                    let mut worst: f64 = 0.0;
                    for a in state.adapters.values() {
                        worst = worst.max(a.norm_preservation_report()?.relative_drift);
                    }
                    Some(worst)
                };
                let n = sums.images as f64;
                log.push(LogRecord::Step(StepRecord {
                    epoch,
                    step,
                    lr,
                    loss: objective,
                    distill: sums.distill / n,
                    pointmap: sums.pointmap / n,
                    images: sums.images,
                    max_norm_drift,
                }));
            }
            epochs_run = epoch + 1;
            let mv = eval_multiview(state, heldout)?;
            let depth = eval_depth(state, heldout)?;
            let rec = EpochRecord {
                epoch,
                tokens: drift_report(state, &probe)?,
                heldout_pointmap_mse: mv.pointmap_mse,
                heldout_rel: depth.rel,
                heldout_delta1: depth.delta1,
            };
            let stop = after_epoch(state, &rec);
            log.push(LogRecord::Epoch(rec));
            if stop {
                break;
            }
        }
        Ok(epochs_run)
    }
}

fn config_record(run: &str, cfg: &impl Serialize) -> Result<LogRecord> {
    Ok(LogRecord::Config {
        run: run.into(),
        config: serde_json::to_value(cfg)?,
    })
}

/// Trains encoder and decoder on multi-view scenes (pointmap loss, plus the
/// depth head against normalized ground truth) and keeps the state with the
/// best held-out pointmap error. Stops after `patience` epochs without
/// improvement.
pub fn pretrain(init: ModelState, train: &Dataset, heldout: &Dataset, cfg: &PretrainConfig) -> Result<(ModelState, RunLog)> {
    cfg.validate()?;
    if !init.freeze_mask.is_empty() || !init.adapters.is_empty() {
        return Err(LabError::Config("pretraining starts from an unfrozen, adapter-free model".into()));
    }
    let mut log = RunLog::default();
    log.push(config_record("pretrain", cfg)?);
    let lp = Loop {
        schedule: cfg.schedule,
        batch: cfg.batch,
        adam: cfg.adam,
        seed: cfg.seed,
        loss: cfg.loss,
        mix: MixSpec {
            mono_weight: 0,
            ..MixSpec::default()
        },
        depth_source: DepthSource::GroundTruth,
        train,
        pools: train.pools(),
    };
    let mut state = init;
    let mut best = (f64::INFINITY, 0usize, state.clone());
    let mut since = 0;
    let epochs_run = lp.run(&mut state, heldout, cfg.probe_images, &mut log, |s, rec| {
        if rec.heldout_pointmap_mse < best.0 {
            best = (rec.heldout_pointmap_mse, rec.epoch, s.clone());
            since = 0;
        } else {
            since += 1;
        }
        since >= cfg.patience
    })?;
    let (_, best_epoch, state) = best;
    log.push(LogRecord::Final {
        epochs_run,
        best_epoch,
        decoder_checksum: state.decoder_checksum(),
    });
    Ok((state, log))
}

/// Applies the mode's parameter selection to a copy of `baseline`.
pub fn prepare_finetune(baseline: &ModelState, cfg: &TrainConfig) -> Result<ModelState> {
    cfg.validate()?;
    if !baseline.adapters.is_empty() {
        return Err(LabError::Config("baseline already carries adapters".into()));
    }
    let mut state = baseline.clone();
    state.freeze_mask.clear();
    match cfg.mode {
        FinetuneMode::DecFull => state.freeze_encoder(),
        FinetuneMode::EncFull => state.freeze_decoder(),
        FinetuneMode::BothFull => {}
        FinetuneMode::EncLora | FinetuneMode::EncRenormLora => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(u64::MAX);
            state.attach_adapters(cfg.lora_rank, cfg.lora_alpha, cfg.adapter_renorm(), cfg.norm_kind, &mut rng)?;
            state.freeze_encoder();
            state.freeze_decoder();
        }
    }
    state.validate()?;
    Ok(state)
}

/// Fine-tunes a copy of `baseline` on teacher distillation (plus
/// multi-view replay when enabled).
pub fn finetune(baseline: &ModelState, train: &Dataset, heldout: &Dataset, cfg: &TrainConfig) -> Result<(ModelState, RunLog)> {
    let mut state = prepare_finetune(baseline, cfg)?;
    let before: BTreeMap<String, Tensor> = state
        .freeze_mask
        .iter()
        .filter_map(|n| state.parameter(n).ok().map(|t| (n.clone(), t)))
        .collect();
    let mut log = RunLog::default();
    log.push(config_record("finetune", cfg)?);
    let lp = Loop {
        schedule: cfg.schedule,
        batch: cfg.batch,
        adam: cfg.adam,
        seed: cfg.seed,
        loss: cfg.loss,
        mix: cfg.effective_mix(),
        depth_source: DepthSource::Teacher,
        train,
        pools: train.pools(),
    };
    let epochs_run = lp.run(&mut state, heldout, cfg.probe_images, &mut log, |_, _| false)?;
    for (name, t) in &before {
        if &state.parameter(name)? != t {
            return Err(LabError::Contract(format!("frozen parameter {name} changed")));
        }
    }
    log.push(LogRecord::Final {
        epochs_run,
        best_epoch: epochs_run.saturating_sub(1),
        decoder_checksum: state.decoder_checksum(),
    });
    Ok((state, log))
}
