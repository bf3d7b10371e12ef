//! Experiment configuration, the federated round loop and run outputs.

mod config;
mod federation;
mod metrics;
mod model_io;

pub use config::{AggregationMode, DatasetSpec, FederationConfig};
pub use federation::{
    evaluate, evaluate_subset, load_datasets, partition_for, run_federation, Federation, RunOutput,
};
pub use metrics::{to_csv, MetricsSink, RoundMetrics, CSV_HEADER};
pub use model_io::{decode_model, encode_model, read_model, write_model};
