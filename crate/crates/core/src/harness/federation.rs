//! The round loop: broadcast, local training, aggregation, evaluation.

use std::time::Instant;

use rayon::prelude::*;

use crate::aggregation::{aggregate_uniform, aggregate_weighted, dual_aggregate};
use crate::autodiff::Graph;
use crate::data::{dirichlet_partition, load_cifar10, synth_blobs, Dataset, Partition};
use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::seed::derive_seed;
use crate::training::{local_round, ClientState, RoundContext, StrategyConfig};

use super::config::{AggregationMode, DatasetSpec, FederationConfig};
use super::metrics::{MetricsSink, RoundMetrics};
use super::model_io::write_model;

const EVAL_CHUNK: usize = 512;

/// Eval-mode accuracy and mean cross-entropy of `model` on `indices` of `data`.
pub fn evaluate_subset(
    model: &ModelParams,
    data: &Dataset,
    indices: &[usize],
) -> Result<(f64, f64)> {
    if indices.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty set".into()));
    }
    let (mut correct, mut loss_sum) = (0usize, 0.0);
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (x, y) = data.batch(chunk);
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let xv = g.constant(x);
        let logits = bound.forward_logits(&mut g, xv)?;
        let ce = g.softmax_cross_entropy(logits, &y)?;
        loss_sum += g.value(ce).item() * chunk.len() as f64;
        let scores = g.value(logits);
        let classes = scores.shape()[1];
        for (row, &label) in scores.data().chunks(classes).zip(&y) {
            let mut best = 0;
            for (c, &s) in row.iter().enumerate() {
                if s > row[best] {
                    best = c;
                }
            }
            correct += usize::from(best == label);
        }
    }
    let n = indices.len() as f64;
    Ok((correct as f64 / n, loss_sum / n))
}

pub fn evaluate(model: &ModelParams, data: &Dataset) -> Result<(f64, f64)> {
    let all: Vec<usize> = (0..data.len()).collect();
    evaluate_subset(model, data, &all)
}

/// Builds train and test sets for the configured dataset.
pub fn load_datasets(cfg: &FederationConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.dataset {
        DatasetSpec::Cifar10(dir) => load_cifar10(dir),
        &DatasetSpec::Blobs {
            classes,
            per_class,
            dim,
            spread,
        } => {
            let train = synth_blobs(
                classes,
                per_class,
                dim,
                spread,
                derive_seed(cfg.seed, "blobs-train", &[]),
            )?;
            let test = synth_blobs(
                classes,
                per_class,
                dim,
                spread,
                derive_seed(cfg.seed, "blobs-test", &[]),
            )?;
            Ok((train, test))
        }
    }
}

pub fn partition_for(cfg: &FederationConfig, train: &Dataset) -> Result<Partition> {
    dirichlet_partition(
        train.labels(),
        cfg.clients,
        cfg.beta,
        derive_seed(cfg.seed, "partition", &[]),
        cfg.min_samples,
    )
}

/// A running federation with all client state in memory.
#[derive(Debug)]
pub struct Federation {
    cfg: FederationConfig,
    strategy: StrategyConfig,
    train: Dataset,
    test: Dataset,
    clients: Vec<ClientState>,
    global: ModelParams,
    history: Vec<RoundMetrics>,
}

impl Federation {
    pub fn from_config(cfg: FederationConfig) -> Result<Self> {
        cfg.validate()?;
        let (train, test) = load_datasets(&cfg)?;
        let partition = partition_for(&cfg, &train)?;
        Self::with_partition(cfg, train, test, &partition)
    }

    /// Starts from an explicit partition; the model is initialized from the experiment seed.
    pub fn with_partition(
        cfg: FederationConfig,
        train: Dataset,
        test: Dataset,
        partition: &Partition,
    ) -> Result<Self> {
        let encoder = cfg.encoder(train.dim(), train.num_classes());
        let global = ModelParams::init(&encoder, derive_seed(cfg.seed, "init-model", &[]))?;
        Self::with_model(cfg, train, test, partition, global)
    }

    pub fn with_model(
        cfg: FederationConfig,
        train: Dataset,
        test: Dataset,
        partition: &Partition,
        global: ModelParams,
    ) -> Result<Self> {
        let strategy = cfg.strategy_config();
        strategy.validate()?;
        if train.dim() != test.dim() || train.num_classes() != test.num_classes() {
            return Err(Error::Config(
                "train and test sets disagree on shape".into(),
            ));
        }
        if partition.assignments().iter().any(|a| a.len() < 2) {
            return Err(Error::Config(
                "every client needs at least 2 samples".into(),
            ));
        }
        let clients = partition
            .assignments()
            .iter()
            .enumerate()
            .map(|(k, shard)| ClientState::new(k, shard, &global, strategy.sgd))
            .collect();
        Ok(Self {
            cfg,
            strategy,
            train,
            test,
            clients,
            global,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn global(&self) -> &ModelParams {
        &self.global
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn train_set(&self) -> &Dataset {
        &self.train
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    pub fn history(&self) -> &[RoundMetrics] {
        &self.history
    }

    /// Runs local training on every client and returns the uploaded models in client order.
    pub fn train_clients(&mut self, round: usize) -> Result<Vec<ModelParams>> {
        let ctx = RoundContext {
            experiment_seed: self.cfg.seed,
            round,
        };
        let (global, strategy, train) = (&self.global, &self.strategy, &self.train);
        let work = |c: &mut ClientState| local_round(c, global, strategy, train, ctx);
        let results: Vec<Result<ModelParams>> = if self.cfg.parallel {
            self.clients.par_iter_mut().map(work).collect()
        } else {
            self.clients.iter_mut().map(work).collect()
        };
        results.into_iter().collect()
    }

    /// One full round; `round` counts from 1.
    pub fn step(&mut self) -> Result<RoundMetrics> {
        let round = self.history.len() + 1;
        self.round_inner(round).map_err(|e| Error::Round {
            round,
            source: Box::new(e),
        })
    }

    fn round_inner(&mut self, round: usize) -> Result<RoundMetrics> {
        let start = Instant::now();
        let uploads = self.train_clients(round)?;
        let (global, weights, similarities, clamped) = match self.cfg.aggregation {
            AggregationMode::Uniform => {
                let k = uploads.len();
                (
                    aggregate_uniform(&uploads)?,
                    vec![1.0 / k as f64; k],
                    None,
                    0,
                )
            }
            AggregationMode::Weighted => {
                let counts: Vec<usize> = self.clients.iter().map(|c| c.train.len()).collect();
                let total: usize = counts.iter().sum();
                let w = counts.iter().map(|&n| n as f64 / total as f64).collect();
                (aggregate_weighted(&uploads, &counts)?, w, None, 0)
            }
            AggregationMode::Dual => {
                let r = dual_aggregate(&uploads)?;
                (r.final_global, r.weights, Some(r.similarities), r.clamped)
            }
        };
        if !global.is_finite() {
            return Err(Error::NonFinite("aggregated global model".into()));
        }
        self.global = global;
        let (global_test_acc, global_test_loss) = evaluate(&self.global, &self.test)?;
        let mut client_acc = 0.0;
        for c in &self.clients {
            client_acc += evaluate_subset(&c.local_model, &self.train, &c.holdout)?.0;
        }
        let seconds = if self.cfg.record_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        let metrics = RoundMetrics {
            round,
            global_test_acc,
            global_test_loss,
            mean_client_acc: client_acc / self.clients.len() as f64,
            weights,
            similarities,
            clamped,
            seconds,
        };
        self.history.push(metrics.clone());
        Ok(metrics)
    }

    /// Runs the remaining rounds, flushing metrics after each one.
    pub fn run(&mut self, sink: Option<&MetricsSink>) -> Result<()> {
        while self.history.len() < self.cfg.rounds {
            let outcome = self.step();
            if let Some(s) = sink {
                s.flush(&self.history)?;
            }
            outcome?;
        }
        if let Some(s) = sink {
            write_model(&s.dir().join("final_model.bin"), &self.global)?;
        }
        Ok(())
    }
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Vec<RoundMetrics>,
    pub final_model: ModelParams,
}

/// Loads data, partitions, trains for `cfg.rounds` rounds and, if an output
/// directory is configured, writes metrics and the final model there.
pub fn run_federation(cfg: &FederationConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let sink = match &cfg.output_dir {
        Some(dir) => Some(MetricsSink::create(dir, &cfg.to_text())?),
        None => None,
    };
    let mut fed = Federation::from_config(cfg.clone())?;
    fed.run(sink.as_ref())?;
    Ok(RunOutput {
        metrics: fed.history,
        final_model: fed.global,
    })
}
