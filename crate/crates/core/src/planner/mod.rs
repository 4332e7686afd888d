//! Measure-level style planner: a compact transformer encoder over a symbolic
//! lead-sheet tape, six slot heads, masked training and inventory-constrained
//! decoding.

mod checkpoint;
mod context;
mod decode;
mod gradcheck;
mod model;
mod train;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use context::{
    contour_bin, density_bin, encode_context, melody_summary, register_bin, rhythm_template, structure_vector, Context,
    Feature, MelodySummary, Token, TokenVocab, COND_DIM, GLOBAL_TOKENS, RHYTHM_TEMPLATES, STRUCT_DIM, TOKENS_PER_MEASURE,
};
pub use decode::{
    plan_song, project_to_inventory, score_style, snap_style, ConstantPredictor, PlanOptions, PlannedSong, SlotPredictor,
};
pub use gradcheck::{grad_check, grad_check_corrupted, GradCheckReport};
pub use model::{PlannerModel, Scalar, SlotDistributions, Tensor};
pub use train::{
    build_samples, masked_loss, masked_loss_over, train, EpochStats, Sample, SlotTargets, TrainData, TrainOutcome,
};

#[derive(Debug, thiserror::Error)]
pub enum PlannerError {
    #[error("measure {0} is outside the song")]
    IndexOutOfRange(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no slot has a valid target")]
    EmptyMask,
    #[error("training needs at least 2 songs, got {0}")]
    DataTooSmall(usize),
    #[error("inventory is empty for {0}-beat measures")]
    EmptyInventory(u8),
    #[error("no inventory vector satisfies the pinned slots")]
    PinsInfeasible,
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Prompt(#[from] crate::prompt::PromptError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum DecodeMode {
    Map,
    Sample { temperature: f64, top_k: Option<usize>, top_p: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub past_window: usize,
    pub future_window: usize,
    pub prompt_constraint_weight: f64,
    /// Train with sampled compatible keyword prompts.
    pub keyword_conditioning: bool,
    pub prompt_sampling: crate::prompt::PromptSampling,
    pub lambda_prior: f64,
    pub lambda_anchor: f64,
    pub decode: DecodeMode,
    pub seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            d_model: 256,
            layers: 4,
            heads: 8,
            d_ff: 1024,
            dropout: 0.1,
            learning_rate: 3e-4,
            epochs: 20,
            batch_size: 32,
            past_window: 32,
            future_window: 1,
            prompt_constraint_weight: 0.2,
            keyword_conditioning: true,
            prompt_sampling: Default::default(),
            lambda_prior: 0.5,
            lambda_anchor: 0.0,
            decode: DecodeMode::Map,
            seed: 0,
        }
    }
}

impl PlannerConfig {
    /// A desk-scale configuration that trains in seconds.
    pub fn tiny() -> Self {
        PlannerConfig {
            d_model: 32,
            layers: 2,
            heads: 4,
            d_ff: 64,
            learning_rate: 3e-3,
            past_window: 4,
            future_window: 1,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(PlannerError::ShapeMismatch(format!("d_model {} not divisible by {} heads", self.d_model, self.heads)));
        }
        if self.past_window == 0 || self.future_window == 0 {
            return Err(PlannerError::ShapeMismatch("windows must be at least 1".into()));
        }
        Ok(())
    }
}
