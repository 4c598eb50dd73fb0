//! The assembled forecaster: ensemble of the two raw heads modulated by
//! attention, parameter initialization, and checkpoints.

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{Checkpoint, ManifestEntry, FORMAT_VERSION, MAGIC};
pub use forward::{forward, forward_nodes, ForwardNodes, ForwardOutput, WindowSample};
pub use params::{init_params, xavier_bound, ModelMeta, ModelNodes, ModelParams, Variant};
