//! Online cross-layer knowledge distillation for graph neural networks.
//!
//! Two or more student GNNs train together on one graph, alternating
//! parameter updates. Besides the usual label loss, every hidden layer of
//! each student aligns its per-node local-structure distribution and its
//! auxiliary class predictions to a *shifted* layer of its peers (layer i
//! learns from layer i+1, wrapping at the top), so information circulates
//! through all layers of all students. The extra pressure keeps deep
//! models from over-smoothing: nodes stay distinguishable and accuracy
//! holds at depths where an identically trained single model degrades.
//!
//! The stack is self-contained: a reverse-mode tape ([`tape`]) with dense
//! ([`dense`]) and edge-segment ([`sparse`]) kernels, GCN/GraphSAGE/GAT
//! students with optional per-layer auxiliary classifiers ([`model`]), the
//! distillation objective ([`loss`]), Adam ([`optim`]), the alternating
//! trainer ([`train`]), dataset loading and synthetic graphs ([`graph`]),
//! evaluation metrics ([`metrics`]), a symbolic tracer for the cross-layer
//! information cycle ([`flow`]), and a config-driven experiment runner
//! ([`run`]) behind the `alignahead` binary.
//!
//! Start with the examples, each runnable on its own:
//!
//! - `gradient_check`: finite differences against the backward pass for
//!   every layer kind and for the full objective.
//! - `information_flow`: the token-passing table showing how structure
//!   information spreads across students and layers.
//! - `local_structure`: neighborhood distributions under the four kernels
//!   and the KL term that aligns them.
//! - `sbm_training`: baseline vs distilled pair on a synthetic community
//!   graph, plus a checkpoint round trip.
//! - `depth_sweep`: accuracy and smoothness across depths.
//! - `datasets`: citation files, binary bundles, splits, block models.
//! - `cora_baseline_vs_distilled`: the headline comparison (needs the
//!   Cora files, see `data/README.md`).

pub mod dense;
pub mod flow;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod run;
pub mod scalar;
pub mod sparse;
pub mod tape;
pub mod train;

pub use dense::DenseMatrix;
pub use graph::{Graph, GraphContext};
pub use loss::{LossConfig, Matching};
pub use model::{ModelKind, ModelSpec, StudentModel};
pub use train::{train_students, TrainConfig, TrainReport};
