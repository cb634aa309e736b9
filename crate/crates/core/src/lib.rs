//! Graph convolutional image classification with learned edge weights and
//! edge convolution over pixel-grid graphs.
//!
//! Each image becomes a graph with one node per pixel. A small filter network
//! assigns every 1-hop edge a weight in `(0, 1)`, an edge convolution lifts
//! pixel intensities to node embeddings using 1- and 2-hop neighbors, three
//! graph convolutions mix them over the weighted, normalized adjacency, and a
//! dense layer classifies the flattened result.
//!
//! The crate carries its own reverse-mode tape ([`tape`]), sparse kernels
//! ([`sparse`]), Adam training ([`training`]), metrics ([`metrics`]) and IDX
//! dataset containers ([`dataset`]).

pub mod checkpoint;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod graph;
pub mod layers;
pub mod metrics;
pub mod sparse;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{DatasetError, GraphError, MetricsError, ModelError, TensorError, TrainError};
pub use graph::{Connectivity, GridCache, GridGraph};
pub use layers::{count_parameters, ModelConfig, ModelParams};
pub use tensor::{Shape, Tensor};


#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/tape.md")]
    mod tape {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
}
