//! Contrastive neighbor embedding.
//!
//! One parameterized loss family covers t-SNE, UMAP/NCE, TriMap, PaCMAP,
//! InfoNCE, self-supervised and supervised contrastive losses, soft nearest
//! neighbors and the supervised t-SCNE loss. Embeddings are trained either
//! as free coordinates or through an MLP encoder, on a binary symmetric kNN
//! graph with uniform affinities.

pub mod data;
pub mod error;
pub mod kernel;
pub mod loss;
pub mod metrics;
pub mod neighbor_graph;
pub mod optimize;
pub mod plot;
pub mod run;
pub mod sampler;

pub use data::{Dataset, Embedding};
pub use error::{Error, Result};
pub use loss::{LossKind, LossSpec};
pub use neighbor_graph::NeighborGraph;
pub use optimize::{Encoder, Mode, OptimConfig};
