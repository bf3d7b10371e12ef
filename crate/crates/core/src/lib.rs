//! Federated learning simulator with stop-gradient siamese local training and
//! similarity-weighted dual aggregation, plus FedAvg, FedProx and MOON
//! baselines. Built on a small reverse-mode autodiff engine over `f64`.

pub mod aggregation;
pub mod autodiff;
pub mod data;
mod error;
pub mod harness;
pub mod nn;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
