//! Content-aware ensembling of MLLM and conventional quality predictions.
//!
//! Key-frame features are pooled per frame, concatenated, and fed to a
//! small gating network whose sigmoid output `alpha` weights the MLLM
//! prediction against the conventional model's:
//! `q_e = alpha·q_p + (1 − alpha)·q_l`.

mod adam;
mod blend;
mod embedding;
mod gate;
mod train;

pub use adam::{adam_step, AdamState, LrSchedule};
pub use blend::{analyze_weights, blend, naive_blend, Direction, WeightFinding, NAIVE_ALPHA};
pub use embedding::{load_embeddings, pool_features, EmbeddingBlock, VQEF_MAGIC, VQEF_VERSION};
pub use gate::{
    loss_and_gradients, sigmoid, GateModel, TrainingRecord, DEFAULT_HIDDEN, VQGM_MAGIC, VQGM_VERSION,
};
pub use train::{train, EpochLog, TrainConfig, TrainedGate};
