//! Network assembly, training, checkpoints, inference and evaluation.

pub mod arch;
pub mod checkpoint;
pub mod config;
mod error;
pub mod eval;
pub mod fixture;
pub mod infer;
pub mod model;
pub mod train;

pub use arch::{ArchitectureConfig, LayerSpec};
pub use checkpoint::Checkpoint;
pub use config::{TrainConfig, Variant};
pub use error::{Error, Result};
pub use infer::Colorizer;
pub use model::{build_model, HeadKind, Model};
pub use train::{LogEntry, Trainer};
