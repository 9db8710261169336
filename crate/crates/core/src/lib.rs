//! Multimodal click-through-rate prediction: PCA fusion of frozen text and
//! image item embeddings, a DIN-style scorer with hand-written gradients,
//! Adam training, and ranking metrics.

pub mod config;
pub mod data;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod pca;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
