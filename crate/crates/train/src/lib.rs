//! Training and inference for HST models: Adam with milestone schedules,
//! augmented patch sampling, staged pretrain → finetune runs with resumable
//! checkpoints, geometric self-ensemble and PSNR/SSIM evaluation.

mod adam;
mod data;
mod error;
mod infer;
mod stage;
mod trainer;

pub use adam::{clip_grad_norm, AdamState, ADAM_EPS, BETA1, BETA2};
pub use data::{image_to_tensor, sample_batch, tensor_to_image, Batch, Pair, PairDataset, SampleInfo};
pub use error::{Result, TrainError};
pub use infer::{evaluate, infer, score_pairs, self_ensemble_infer, self_ensemble_planar, EvalReport, EvalRow, HstModel, Upscaler};
pub use stage::{finetune_stage, pretrain_stage, scaled, stage_chain, TrainStage};
pub use trainer::{batch_rng, loss_and_grads, run_stage, LogRecord, RunOptions, StageReport, TrainState};
