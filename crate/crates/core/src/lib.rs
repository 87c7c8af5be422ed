//! Self-reasoning retrieval-augmented generation: structured trajectories
//! (relevance, evidence, analysis), BM25 retrieval, pluggable LLM backends,
//! training-data synthesis with quality control, evaluation metrics,
//! retrieval-robustness experiments and stage-wise masked training data.

pub mod datagen;
pub mod eval;
pub mod gateway;
pub mod pipeline;
pub mod retrieval;
pub mod robustness;
pub mod seed;
pub mod text;
pub mod training;
pub mod trajectory;

pub use trajectory::{
    parse_trajectory, serialize_trajectory, Document, ModelOutput, Question, SelfReasoningTrajectory, TaskKind,
};
