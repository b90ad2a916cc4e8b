//! Minimal reverse-mode differentiation over the primitives the segmentation
//! network needs.

mod checkpoint;
mod gradcheck;
mod graph;
pub mod kernels;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, ManifestEntry};
pub use gradcheck::{finite_diff_check, relative_error};
pub use graph::{Gradients, Graph, NodeId, OpKind};
pub use kernels::UpsampleMode;
pub use params::{NamedParam, ParamSet};
