//! Per-round metrics and the files written to the output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const CSV_HEADER: &str = "round,global_test_acc,global_test_loss,mean_client_acc,seconds";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub global_test_acc: f64,
    pub global_test_loss: f64,
    pub mean_client_acc: f64,
    /// Aggregation weight of each client.
    pub weights: Vec<f64>,
    /// Cosine similarity of each client to the first aggregate (dual mode only).
    pub similarities: Option<Vec<f64>>,
    pub clamped: usize,
    pub seconds: f64,
}

impl RoundMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.round,
            self.global_test_acc,
            self.global_test_loss,
            self.mean_client_acc,
            self.seconds
        )
    }
}

pub fn to_csv(rounds: &[RoundMetrics]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rounds {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Writes `metrics.csv`, `metrics.json` and `config.resolved` under one directory.
#[derive(Debug, Clone)]
pub struct MetricsSink {
    dir: PathBuf,
}

impl MetricsSink {
    /// Creates the directory and writes the resolved config, failing before
    /// any training if the location is not writable.
    pub fn create(dir: &Path, resolved_config: &str) -> Result<Self> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.resolved"), resolved_config)?;
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Rewrites both metrics files with every round so far.
    pub fn flush(&self, rounds: &[RoundMetrics]) -> Result<()> {
        fs::write(self.dir.join("metrics.csv"), to_csv(rounds))?;
        let mut w = BufWriter::new(File::create(self.dir.join("metrics.json"))?);
        serde_json::to_writer_pretty(&mut w, rounds)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}
