//! Datasets and client partitioning.

mod blobs;
mod cifar;
mod dataset;
mod partition;

pub use blobs::{class_centres, synth_blobs};
pub use cifar::{
    load_cifar10, read_batch_file, PIXELS as CIFAR_PIXELS, RECORD_BYTES as CIFAR_RECORD_BYTES,
};
pub use dataset::Dataset;
pub use partition::{
    dirichlet_partition, largest_remainder, sample_dirichlet, Partition, DEFAULT_MIN_SAMPLES,
};
