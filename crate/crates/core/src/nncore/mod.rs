//! Dense two-tower network: per-field embedding pooling, stacked aggregation,
//! per-arm dense stacks and a similarity layer, with pairwise training and a
//! finite-difference gradient check.

pub mod bundle;
mod forward;
mod gradcheck;
mod model;
mod spec;
mod train;
mod vocab;
mod weights;

pub use forward::{cosine, embed_pool, pool_rows, similarity, FieldTokens};
pub use gradcheck::{grad_check, grad_check_with, GRAD_CHECK_SAMPLES};
pub use model::Model;
pub use spec::{Activation, ArmSpec, CrossKind, CrossSpec, FieldSpec, ModelSpec, Pooling};
pub use train::{mean_loss, pairwise_accuracy, train, LossKind, TrainConfig, TrainExample, TrainReport};
pub use vocab::{FieldVocab, ModelVocab, Vocab};
pub use weights::{
    init_weights, model_tensors, ArmWeights, CrossWeights, Dense, EmbeddingTable, InitConfig,
    ModelWeights, Real, TensorRef,
};
pub(crate) use weights::{arm_tensors, arm_tensors_mut, cross_tensors, cross_tensors_mut};
