//! Multi-task sequence labeling with a shared BiLSTM trunk and per-task CRF
//! heads, plus the experiment machinery around it: BIO corpora, sparsity
//! scenarios, a Nadam trainer with a main-task-driven multi-task schedule,
//! random hyperparameter search, and macro-F1 evaluation with significance
//! tests and normalized learning-delta curves.

pub mod data;
pub mod eval;
pub mod graph;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod trainer;
pub mod util;

pub use data::{Dataset, Document, EmbeddingTable, SparsityScenario, TagSet, Token};
pub use graph::{Graph, NodeId};
pub use matrix::Matrix;
pub use model::{ModelConfig, TaskModel};
pub use optim::{NadamConfig, NadamState, SearchSpace};
pub use trainer::{RunRecord, TrainMode, TrainPlan};
