//! Label space and the three network shapes: plain CNN, two-stream CNN and
//! the interweaved four-stream network.

mod checkpoint;
mod config;
mod labels;
mod network;

pub use checkpoint::{Descriptor, DESCRIPTOR, PARAMS};
pub use config::{ModelConfig, ModelKind};
pub use labels::{aggregate_id, aggregate_label, AggregatedLabel, BehaviorLabel};
pub use network::{build_model, Model, Stream, TrainPass, WindowBatch};
