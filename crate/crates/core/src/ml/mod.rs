//! Small dense-network stack used for local training.

pub mod data;
pub mod metrics;
pub mod model;

pub use data::{dirichlet_partition, generate_synthetic, load_csv, LabeledDataset, PartitionSpec};
pub use metrics::{evaluate, Metrics};
pub use model::{train_local, Dense, Model, TrainConfig};
