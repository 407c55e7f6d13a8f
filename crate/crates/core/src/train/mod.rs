//! Pretraining, fine-tuning ablations, evaluation and token-norm probes.

mod adam;
mod config;
mod eval;
mod run;
mod step;

pub use adam::Adam;
pub use config::{lr_at, AdamConfig, BatchConfig, FinetuneMode, PretrainConfig, Schedule, TrainConfig};
pub use eval::{
    drift_report, eval_depth, eval_depth_with, eval_multiview, eval_multiview_with, evaluate, model_predictor, probe_images,
    DriftReport, MultiViewEval, Predictor, EVAL_VIEWS,
};
pub use run::{finetune, prepare_finetune, pretrain, EpochRecord, LogRecord, RunLog, StepRecord};
pub use step::{batch_gradients, draw_images, draw_objective, DepthSource, LossSums, DEPTH_CONF, POINT_CONF};
