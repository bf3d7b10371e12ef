//! One client's local update for one round.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::losses::{hist_from, moon_from, proximal_from, stop_from, views, Want};
use crate::autodiff::{Graph, Mode, SgdConfig, SgdState, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{BnRecord, ModelParams};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    FedAvg,
    FedProx,
    Moon,
    FedSiamDa,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::FedAvg => "fedavg",
            Strategy::FedProx => "fedprox",
            Strategy::Moon => "moon",
            Strategy::FedSiamDa => "fedsiam_da",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedavg" => Ok(Strategy::FedAvg),
            "fedprox" => Ok(Strategy::FedProx),
            "moon" => Ok(Strategy::Moon),
            "fedsiam_da" | "fedsiam" => Ok(Strategy::FedSiamDa),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Whether the client-side global copy receives its own SGD step per batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalCopyUpdate {
    PerBatch,
    Off,
}

impl fmt::Display for GlobalCopyUpdate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GlobalCopyUpdate::PerBatch => "per_batch",
            GlobalCopyUpdate::Off => "off",
        })
    }
}

impl FromStr for GlobalCopyUpdate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_batch" => Ok(GlobalCopyUpdate::PerBatch),
            "off" => Ok(GlobalCopyUpdate::Off),
            other => Err(Error::Config(format!(
                "unknown global_copy_update {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    pub mu: f64,
    pub moon_temperature: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    pub global_copy_update: GlobalCopyUpdate,
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mu.is_nan()
            || self.mu < 0.0
            || self.moon_temperature.is_nan()
            || self.moon_temperature <= 0.0
        {
            return Err(Error::Config(format!(
                "mu must be >= 0 and moon_temperature > 0, got {} and {}",
                self.mu, self.moon_temperature
            )));
        }
        if self.local_epochs == 0 || self.batch_size < 2 {
            return Err(Error::Config(format!(
                "need local_epochs >= 1 and batch_size >= 2, got {} and {}",
                self.local_epochs, self.batch_size
            )));
        }
        self.sgd.validate()
    }
}

/// Per-client state carried across rounds.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    /// Indices used for local SGD.
    pub train: Vec<usize>,
    /// Held-out indices for client accuracy.
    pub holdout: Vec<usize>,
    pub local_model: ModelParams,
    pub history_model: ModelParams,
    /// The adversarially trained clone of the received global model; only
    /// meaningful after a FedSiam-DA round and never uploaded.
    pub global_copy: Option<ModelParams>,
    pub sgd_local: SgdState,
    pub sgd_global_copy: SgdState,
}

impl ClientState {
    /// Splits off the last 10% of `shard` (at least one sample) as the held-out set.
    pub fn new(client_id: usize, shard: &[usize], initial: &ModelParams, sgd: SgdConfig) -> Self {
        let holdout_len = (shard.len() / 10).max(1).min(shard.len().saturating_sub(1));
        let (train, holdout) = shard.split_at(shard.len() - holdout_len);
        Self::with_split(client_id, train.to_vec(), holdout.to_vec(), initial, sgd)
    }

    pub fn with_split(
        client_id: usize,
        train: Vec<usize>,
        holdout: Vec<usize>,
        initial: &ModelParams,
        sgd: SgdConfig,
    ) -> Self {
        Self {
            client_id,
            train,
            holdout,
            local_model: initial.clone(),
            history_model: initial.clone(),
            global_copy: None,
            sgd_local: SgdState::new(sgd),
            sgd_global_copy: SgdState::new(sgd),
        }
    }
}

/// Identifies the round for seed derivation.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext {
    pub experiment_seed: u64,
    pub round: usize,
}

/// Minibatches for one epoch, shuffled by a (client, round, epoch) keyed stream.
/// A trailing batch of one sample is dropped since batch norm needs two rows.
pub fn epoch_batches(
    indices: &[usize],
    batch_size: usize,
    ctx: RoundContext,
    client: usize,
    epoch: usize,
) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    let mut rng = rng_for(
        ctx.experiment_seed,
        "batch-order",
        &[client as u64, ctx.round as u64, epoch as u64],
    );
    order.shuffle(&mut rng);
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

fn check_finite(g: &Graph, loss: Var) -> Result<f64> {
    let v = g.value(loss).item();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("loss = {v}")));
    }
    Ok(v)
}

/// Runs `M` epochs of minibatch SGD on the local model, calling `step` per
/// batch. `step` receives the batch and returns after updating `state`.
fn run_epochs<F>(
    state: &mut ClientState,
    global: &ModelParams,
    cfg: &StrategyConfig,
    data: &Dataset,
    ctx: RoundContext,
    mut step: F,
) -> Result<ModelParams>
where
    F: FnMut(&mut ClientState, &crate::autodiff::Tensor, &[usize]) -> Result<()>,
{
    cfg.validate()?;
    if !global.is_finite() {
        return Err(Error::NonFinite("received global model".into()));
    }
    if state.train.len() < 2 {
        return Err(Error::Config(format!(
            "client {} has {} training samples",
            state.client_id,
            state.train.len()
        )));
    }
    state.local_model = global.clone();
    state.sgd_local = SgdState::new(cfg.sgd);
    state.sgd_global_copy = SgdState::new(cfg.sgd);
    for epoch in 0..cfg.local_epochs {
        let batches = epoch_batches(&state.train, cfg.batch_size, ctx, state.client_id, epoch);
        for (b, idx) in batches.iter().enumerate() {
            let (x, y) = data.batch(idx);
            step(state, &x, &y).map_err(|e| Error::ClientAbort {
                client: state.client_id,
                round: ctx.round,
                epoch,
                batch: b,
                source: Box::new(e),
            })?;
        }
        state.history_model = state.local_model.clone();
    }
    Ok(state.local_model.clone())
}

/// One SGD step on the local model for `loss` built by `build`.
fn local_step<F>(state: &mut ClientState, build: F) -> Result<()>
where
    F: FnOnce(&mut Graph, &crate::nn::BoundModel, &ClientState, &mut BnRecord) -> Result<Var>,
{
    let mut g = Graph::new();
    let mut rec = BnRecord::default();
    let (grads, vars) = {
        let bound = state.local_model.bind(&mut g, true);
        let loss = build(&mut g, &bound, state, &mut rec)?;
        check_finite(&g, loss)?;
        (g.backward(loss)?, bound.vars().to_vec())
    };
    let grads = grads.wrt(&vars);
    state
        .sgd_local
        .step(state.local_model.trainable_mut(), &grads)?;
    state.local_model.update_running_stats(&rec);
    Ok(())
}

/// Plain cross-entropy SGD from a copy of the global model.
pub fn local_round_fedavg(
    state: &mut ClientState,
    global: &ModelParams,
    cfg: &StrategyConfig,
    data: &Dataset,
    ctx: RoundContext,
) -> Result<ModelParams> {
    run_epochs(state, global, cfg, data, ctx, |state, x, y| {
        local_step(state, |g, model, _, _| {
            let xv = g.constant(x.clone());
            let logits = model.forward_logits(g, xv)?;
            g.softmax_cross_entropy(logits, y)
        })
    })
}

/// Cross-entropy plus `(μ/2)·‖w − w_global‖²`.
pub fn local_round_fedprox(
    state: &mut ClientState,
    global: &ModelParams,
    cfg: &StrategyConfig,
    data: &Dataset,
    ctx: RoundContext,
) -> Result<ModelParams> {
    let mu = cfg.mu;
    run_epochs(state, global, cfg, data, ctx, |state, x, y| {
        local_step(state, |g, model, _, _| {
            let xv = g.constant(x.clone());
            let logits = model.forward_logits(g, xv)?;
            let ce = g.softmax_cross_entropy(logits, y)?;
            let prox = proximal_from(g, model, global, mu)?;
            g.add(ce, prox)
        })
    })
}

/// Cross-entropy plus `μ·ℓ_con`, contrasting against the received global
/// model (positive) and the history model (negative).
pub fn local_round_moon(
    state: &mut ClientState,
    global: &ModelParams,
    cfg: &StrategyConfig,
    data: &Dataset,
    ctx: RoundContext,
) -> Result<ModelParams> {
    let (mu, tau) = (cfg.mu, cfg.moon_temperature);
    run_epochs(state, global, cfg, data, ctx, |state, x, y| {
        local_step(state, |g, model, state, rec| {
            let xv = g.constant(x.clone());
            let v = views(g, model, xv, Mode::Train, rec, Want::ALL)?;
            let ce = g.softmax_cross_entropy(v.logits.expect("logits"), y)?;
            let gm = global.bind(g, false);
            let zg = views(g, &gm, xv, Mode::Eval, &mut BnRecord::default(), Want::REPR)?.z;
            let hm = state.history_model.bind(g, false);
            let zp = views(g, &hm, xv, Mode::Eval, &mut BnRecord::default(), Want::REPR)?.z;
            let con = moon_from(g, v.z, zg, zp, tau)?;
            let weighted = g.scale(con, mu);
            g.add(ce, weighted)
        })
    })
}

/// Stop-gradient siamese local training.
///
/// Per batch: (A) one SGD step on the global copy against the stop-gradient
/// loss, then (B) one SGD step on the local model against
/// `CE + μ·(L_hist + L_stop)` using the freshly updated global copy.
pub fn local_round_fedsiam(
    state: &mut ClientState,
    global: &ModelParams,
    cfg: &StrategyConfig,
    data: &Dataset,
    ctx: RoundContext,
) -> Result<ModelParams> {
    let mu = cfg.mu;
    let update_copy = cfg.global_copy_update == GlobalCopyUpdate::PerBatch;
    state.global_copy = Some(global.clone());
    run_epochs(state, global, cfg, data, ctx, |state, x, y| {
        if update_copy {
            global_copy_step(state, x)?;
        }
        local_step(state, |g, model, state, rec| {
            let xv = g.constant(x.clone());
            let local = views(g, model, xv, Mode::Train, rec, Want::ALL)?;
            let ce = g.softmax_cross_entropy(local.logits.expect("logits"), y)?;
            let gc_model = state.global_copy.as_ref().expect("global copy");
            let gc = gc_model.bind(g, false);
            let gcv = views(g, &gc, xv, Mode::Eval, &mut BnRecord::default(), Want::PRED)?;
            let hm = state.history_model.bind(g, false);
            let zh = views(g, &hm, xv, Mode::Eval, &mut BnRecord::default(), Want::REPR)?.z;
            let hist = hist_from(g, local.z, zh)?;
            let stop = stop_from(g, &local, &gcv)?;
            let reg = g.add(hist, stop.total)?;
            let weighted = g.scale(reg, mu);
            g.add(ce, weighted)
        })
    })
}

fn global_copy_step(state: &mut ClientState, x: &crate::autodiff::Tensor) -> Result<()> {
    let gc_model = state.global_copy.as_mut().expect("global copy");
    let mut g = Graph::new();
    let mut rec = BnRecord::default();
    let (grads, vars) = {
        let gc = gc_model.bind(&mut g, true);
        let xv = g.constant(x.clone());
        let gcv = views(&mut g, &gc, xv, Mode::Train, &mut rec, Want::PRED)?;
        let local = state.local_model.bind(&mut g, false);
        let lv = views(
            &mut g,
            &local,
            xv,
            Mode::Eval,
            &mut BnRecord::default(),
            Want::PRED,
        )?;
        let stop = stop_from(&mut g, &lv, &gcv)?;
        check_finite(&g, stop.total)?;
        (g.backward(stop.total)?, gc.vars().to_vec())
    };
    let grads = grads.wrt(&vars);
    state
        .sgd_global_copy
        .step(gc_model.trainable_mut(), &grads)?;
    gc_model.update_running_stats(&rec);
    Ok(())
}

/// Dispatches to the round function for `cfg.strategy`.
pub fn local_round(
    state: &mut ClientState,
    global: &ModelParams,
    cfg: &StrategyConfig,
    data: &Dataset,
    ctx: RoundContext,
) -> Result<ModelParams> {
    match cfg.strategy {
        Strategy::FedAvg => local_round_fedavg(state, global, cfg, data, ctx),
        Strategy::FedProx => local_round_fedprox(state, global, cfg, data, ctx),
        Strategy::Moon => local_round_moon(state, global, cfg, data, ctx),
        Strategy::FedSiamDa => local_round_fedsiam(state, global, cfg, data, ctx),
    }
}
