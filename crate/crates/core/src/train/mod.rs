//! Pretraining, fine-tuning, metrics and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod finetune;
pub mod metrics;
pub mod optim;
pub mod pretrain;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader,
    CheckpointMeta, HeadSpec,
};
pub use config::{Ablations, Pooling, TrainConfig};
pub use finetune::{evaluate_head, finetune, persistence_mae, Finetuned, FinetuneRecord, Head, Task};
pub use metrics::{mae_p, mse_m, mse_v, precision};
pub use optim::Adam;
pub use pretrain::{
    evaluate, mean_imputation, prepare, pretrain, pretrain_with, reconstruct, reconstruction_metrics, EpochRecord,
    EvalReport, Prepared, Pretrained,
};
