//! File formats and synthetic data.

pub mod checkpoint;
pub mod embeddings;
pub mod interactions;
pub mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, Manifest};
pub use embeddings::{load_embedding_table, write_embedding_table, EmbeddingFile};
pub use interactions::{load_interactions, save_interactions, InteractionRecord};
pub use synth::{generate_synthetic, SignalPlacement, SyntheticDataset, SyntheticSpec};
