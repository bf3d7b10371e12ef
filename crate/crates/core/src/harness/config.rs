//! Experiment configuration as flat `key = value` text.
//!
//! Blank lines and `#` comments are ignored. The dataset is written as
//! `blobs:classes=10,per_class=200,dim=32,spread=0.5` or `cifar10:<dir>`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::SgdConfig;
use crate::error::{Error, Result};
use crate::nn::EncoderConfig;
use crate::training::{GlobalCopyUpdate, Strategy, StrategyConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetSpec {
    Cifar10(PathBuf),
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        spread: f64,
    },
}

impl fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSpec::Cifar10(dir) => write!(f, "cifar10:{}", dir.display()),
            DatasetSpec::Blobs {
                classes,
                per_class,
                dim,
                spread,
            } => write!(
                f,
                "blobs:classes={classes},per_class={per_class},dim={dim},spread={spread}"
            ),
        }
    }
}

impl FromStr for DatasetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(dir) = s.strip_prefix("cifar10:") {
            return Ok(DatasetSpec::Cifar10(PathBuf::from(dir.trim())));
        }
        let Some(args) = s.strip_prefix("blobs") else {
            return Err(Error::Config(format!("unknown dataset {s:?}")));
        };
        let (mut classes, mut per_class, mut dim, mut spread) = (10, 200, 32, 0.5);
        let args = args.strip_prefix(':').unwrap_or(args);
        for part in args.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| {
                Error::Config(format!("expected key=value in dataset, got {part:?}"))
            })?;
            match k.trim() {
                "classes" => classes = parse(k, v)?,
                "per_class" => per_class = parse(k, v)?,
                "dim" => dim = parse(k, v)?,
                "spread" => spread = parse(k, v)?,
                other => return Err(Error::Config(format!("unknown blobs parameter {other:?}"))),
            }
        }
        Ok(DatasetSpec::Blobs {
            classes,
            per_class,
            dim,
            spread,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    Uniform,
    Weighted,
    Dual,
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregationMode::Uniform => "uniform",
            AggregationMode::Weighted => "weighted",
            AggregationMode::Dual => "dual",
        })
    }
}

impl FromStr for AggregationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(AggregationMode::Uniform),
            "weighted" => Ok(AggregationMode::Weighted),
            "dual" => Ok(AggregationMode::Dual),
            other => Err(Error::Config(format!("unknown aggregation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub dataset: DatasetSpec,
    pub clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub mu: f64,
    pub strategy: Strategy,
    pub aggregation: AggregationMode,
    pub beta: f64,
    pub seed: u64,
    pub min_samples: usize,
    pub moon_temperature: f64,
    pub global_copy_update: GlobalCopyUpdate,
    pub output_dir: Option<PathBuf>,
    pub backbone_hidden: Vec<usize>,
    pub projection_hidden: usize,
    pub projection_dim: usize,
    pub prediction_hidden: usize,
    /// Train clients on the rayon pool instead of one after another.
    pub parallel: bool,
    /// Record wall-clock seconds per round; when off the column is written as 0.
    pub record_time: bool,
}

impl Default for FederationConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::Blobs {
                classes: 10,
                per_class: 200,
                dim: 32,
                spread: 0.5,
            },
            clients: 10,
            rounds: 50,
            local_epochs: 5,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-5,
            mu: 0.1,
            strategy: Strategy::FedSiamDa,
            aggregation: AggregationMode::Dual,
            beta: 0.3,
            seed: 0,
            min_samples: crate::data::DEFAULT_MIN_SAMPLES,
            moon_temperature: 0.5,
            global_copy_update: GlobalCopyUpdate::PerBatch,
            output_dir: None,
            backbone_hidden: vec![128, 64],
            projection_hidden: 64,
            projection_dim: 32,
            prediction_hidden: 16,
            parallel: true,
            record_time: true,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid boolean {value:?} for {key}"
        ))),
    }
}

fn parse_widths(key: &str, value: &str) -> Result<Vec<usize>> {
    let value = value.trim();
    if value.is_empty() || value == "none" {
        return Ok(Vec::new());
    }
    value.split(',').map(|w| parse(key, w)).collect()
}

impl FederationConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Ingestion {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = value.parse()?,
            "clients" => self.clients = parse(key, value)?,
            "rounds" => self.rounds = parse(key, value)?,
            "local_epochs" => self.local_epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "mu" => self.mu = parse(key, value)?,
            "strategy" => self.strategy = value.parse()?,
            "aggregation" => self.aggregation = value.parse()?,
            "beta" => self.beta = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "min_samples" => self.min_samples = parse(key, value)?,
            "moon_temperature" => self.moon_temperature = parse(key, value)?,
            "global_copy_update" => self.global_copy_update = value.parse()?,
            "output_dir" => {
                self.output_dir = if value.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(value))
                }
            }
            "backbone_hidden" => self.backbone_hidden = parse_widths(key, value)?,
            "projection_hidden" => self.projection_hidden = parse(key, value)?,
            "projection_dim" => self.projection_dim = parse(key, value)?,
            "prediction_hidden" => self.prediction_hidden = parse(key, value)?,
            "parallel" => self.parallel = parse_bool(key, value)?,
            "record_time" => self.record_time = parse_bool(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients < 2 || self.rounds < 1 || self.local_epochs < 1 || self.batch_size < 2 {
            return Err(Error::Config(format!(
                "need clients >= 2, rounds >= 1, local_epochs >= 1, batch_size >= 2; got {}, {}, {}, {}",
                self.clients, self.rounds, self.local_epochs, self.batch_size
            )));
        }
        if self.beta.is_nan() || self.beta <= 0.0 {
            return Err(Error::Config(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        self.strategy_config().validate()
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn strategy_config(&self) -> StrategyConfig {
        StrategyConfig {
            strategy: self.strategy,
            mu: self.mu,
            moon_temperature: self.moon_temperature,
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            sgd: self.sgd(),
            global_copy_update: self.global_copy_update,
        }
    }

    pub fn encoder(&self, input_dim: usize, num_classes: usize) -> EncoderConfig {
        EncoderConfig {
            input_dim,
            backbone_hidden: self.backbone_hidden.clone(),
            projection_hidden: self.projection_hidden,
            projection_dim: self.projection_dim,
            prediction_hidden: self.prediction_hidden,
            num_classes,
        }
    }

    /// Every key with its resolved value, in the same format [`parse`](Self::parse) reads.
    pub fn to_text(&self) -> String {
        let widths = if self.backbone_hidden.is_empty() {
            "none".to_string()
        } else {
            self.backbone_hidden
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        let out_dir = self
            .output_dir
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        let pairs: Vec<(&str, String)> = vec![
            ("dataset", self.dataset.to_string()),
            ("clients", self.clients.to_string()),
            ("rounds", self.rounds.to_string()),
            ("local_epochs", self.local_epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("mu", self.mu.to_string()),
            ("strategy", self.strategy.to_string()),
            ("aggregation", self.aggregation.to_string()),
            ("beta", self.beta.to_string()),
            ("seed", self.seed.to_string()),
            ("min_samples", self.min_samples.to_string()),
            ("moon_temperature", self.moon_temperature.to_string()),
            ("global_copy_update", self.global_copy_update.to_string()),
            ("output_dir", out_dir),
            ("backbone_hidden", widths),
            ("projection_hidden", self.projection_hidden.to_string()),
            ("projection_dim", self.projection_dim.to_string()),
            ("prediction_hidden", self.prediction_hidden.to_string()),
            ("parallel", self.parallel.to_string()),
            ("record_time", self.record_time.to_string()),
        ];
        pairs
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
