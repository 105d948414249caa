//! In-sample embedding: one edge-weighted attention layer per
//! meta-structure, fused by learned structure weights and trained against a
//! two-class softmax head.

mod checkpoint;
mod features;
mod layers;
mod model;

pub use checkpoint::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use features::{build_features, masked_adjacency, FeatureMatrix, FeatureMode};
pub use layers::{
    egat_forward, fuse, inter_ms_weights, AttentionGraph, ClassifierHead, EgatHead, EgatLayer,
    EgatOutput, InterMsAttention, EDGE_EPS, ELU_ALPHA,
};
pub use model::{
    forward, loss_and_gradients, loss_on_tape, train, train_with, training_targets, Forward,
    MsGatModel, Params, TrainConfig, TrainingGraph,
};
