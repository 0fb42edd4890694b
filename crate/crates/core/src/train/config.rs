use serde::{Deserialize, Serialize};

use crate::data::masking::check_ratio;
use crate::data::MissingPattern;
use crate::dbt::FusionKind;
use crate::error::{DmaeError, Result};
use crate::model::{EmbeddingKind, ModelConfig};

/// Components that can be removed for ablation runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Constant token instead of the learned embedding.
    pub dpe: bool,
    /// No random masking; only the visible-reconstruction term is trained.
    pub rm: bool,
    /// One static kernel per layer.
    pub dk: bool,
    /// Concatenation instead of attention across scales.
    pub asf: bool,
}

impl Ablations {
    pub fn parse(name: &str) -> Result<Self> {
        let mut a = Ablations::default();
        a.set(name)?;
        Ok(a)
    }

    pub fn set(&mut self, name: &str) -> Result<()> {
        match name {
            "dpe" => self.dpe = true,
            "rm" => self.rm = true,
            "dk" => self.dk = true,
            "asf" => self.asf = true,
            other => return Err(DmaeError::Config(format!("unknown ablation {other:?} (dpe|rm|dk|asf)"))),
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    /// Time mean concatenated with the final step's features.
    MeanLast,
}

impl Pooling {
    pub fn width(self, hidden: usize) -> usize {
        match self {
            Pooling::Mean => hidden,
            Pooling::MeanLast => 2 * hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: usize,
    pub mask_ratio: f64,
    /// Pattern of the artificial masks drawn during pretraining.
    pub mask_pattern: MissingPattern,
    pub mask_span: usize,
    pub kernel_sizes: [usize; 3],
    pub num_kernels: usize,
    pub kernel_temperature: f64,
    pub fusion_temperature: f64,
    pub attention_hidden: Option<usize>,
    pub noise_std: f64,
    pub warm_up_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub ablate: Ablations,
    pub finetune_epochs: usize,
    pub finetune_learning_rate: f64,
    pub freeze_encoder: bool,
    pub pooling: Pooling,
    /// Attribute predicted by the forecasting head.
    pub target: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 64,
            mask_ratio: 0.2,
            mask_pattern: MissingPattern::Point,
            mask_span: crate::data::DEFAULT_SPAN,
            kernel_sizes: [3, 5, 7],
            num_kernels: 4,
            kernel_temperature: 4.0,
            fusion_temperature: 4.0,
            attention_hidden: None,
            noise_std: 0.01,
            warm_up_epochs: 10,
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            ablate: Ablations::default(),
            finetune_epochs: 20,
            finetune_learning_rate: 1e-4,
            freeze_encoder: false,
            pooling: Pooling::Mean,
            target: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DmaeError::Config(m));
        check_ratio(self.mask_ratio)?;
        if self.epochs == 0 || self.warm_up_epochs >= self.epochs {
            return bad(format!("need warm_up_epochs < epochs, got {} and {}", self.warm_up_epochs, self.epochs));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(self.finetune_learning_rate > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.mask_span == 0 {
            return bad("mask_span must be positive".into());
        }
        self.model_config(1, 1).validate()
    }

    /// Architecture for `n` attributes and windows of length `len`, with
    /// ablations applied.
    pub fn model_config(&self, n: usize, len: usize) -> ModelConfig {
        ModelConfig {
            n,
            len,
            hidden: self.hidden,
            kernel_sizes: self.kernel_sizes,
            num_kernels: if self.ablate.dk { 1 } else { self.num_kernels },
            kernel_temperature: self.kernel_temperature,
            fusion_temperature: self.fusion_temperature,
            attention_hidden: self.attention_hidden,
            noise_std: self.noise_std,
            embedding: if self.ablate.dpe { EmbeddingKind::HardCode } else { EmbeddingKind::Dynamic },
            token: 0.0,
            fusion: if self.ablate.asf { FusionKind::Concat } else { FusionKind::Attention },
        }
    }

    pub fn warm_up_active(&self, epoch: usize) -> bool {
        epoch < self.warm_up_epochs
    }
}
