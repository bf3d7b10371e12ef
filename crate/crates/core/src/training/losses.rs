//! Local objectives built on the graph.
//!
//! The `*_from` functions combine already-computed views; the plain
//! functions run the forwards themselves and are convenient for one-off
//! evaluation and tests.

use crate::autodiff::{Graph, Mode, Tensor, Var};
use crate::error::Result;
use crate::nn::{BnRecord, BoundModel, ModelParams};

/// Outputs of one forward pass through a bound model.
#[derive(Debug, Clone, Copy)]
pub struct Views {
    pub z: Var,
    pub p: Option<Var>,
    pub logits: Option<Var>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Want {
    pub prediction: bool,
    pub logits: bool,
}

impl Want {
    pub const REPR: Want = Want {
        prediction: false,
        logits: false,
    };
    pub const PRED: Want = Want {
        prediction: true,
        logits: false,
    };
    pub const ALL: Want = Want {
        prediction: true,
        logits: true,
    };
}

/// Runs the backbone once and derives the requested heads from it.
pub fn views(
    g: &mut Graph,
    model: &BoundModel,
    x: Var,
    mode: Mode,
    record: &mut BnRecord,
    want: Want,
) -> Result<Views> {
    let features = model.backbone(g, x)?;
    let logits = if want.logits {
        Some(model.classify(g, features)?)
    } else {
        None
    };
    let z = model.project(g, features, mode, record)?;
    let p = if want.prediction {
        Some(model.forward_pred(g, z, mode, record)?)
    } else {
        None
    };
    Ok(Views { z, p, logits })
}

/// The two halves of the symmetrized stop-gradient loss.
#[derive(Debug, Clone, Copy)]
pub struct StopLoss {
    /// `½·D(p_global_copy, stopgrad(z_local))`: reaches only the global copy.
    pub toward_local: Var,
    /// `½·D(p_local, stopgrad(z_global_copy))`: reaches only the local model.
    pub toward_global: Var,
    pub total: Var,
}

/// Negative cosine similarity `−cos(p, stopgrad(z))`.
///
/// The training losses use the masked cosine: with zero-initialized biases a
/// ReLU layer can emit an all-zero row, which then contributes nothing
/// instead of aborting the round.
pub fn neg_cos_stopped(g: &mut Graph, p: Var, z: Var) -> Result<Var> {
    let target = g.detach(z);
    let c = g.cosine_similarity_masked(p, target)?;
    Ok(g.scale(c, -1.0))
}

pub fn stop_from(g: &mut Graph, local: &Views, global_copy: &Views) -> Result<StopLoss> {
    let p_gc = global_copy.p.expect("global copy prediction");
    let p_local = local.p.expect("local prediction");
    let a = neg_cos_stopped(g, p_gc, local.z)?;
    let toward_local = g.scale(a, 0.5);
    let b = neg_cos_stopped(g, p_local, global_copy.z)?;
    let toward_global = g.scale(b, 0.5);
    let total = g.add(toward_local, toward_global)?;
    Ok(StopLoss {
        toward_local,
        toward_global,
        total,
    })
}

/// Positive cosine `cos(stopgrad(z_history), z_current)`.
pub fn hist_from(g: &mut Graph, current_z: Var, history_z: Var) -> Result<Var> {
    let h = g.detach(history_z);
    g.cosine_similarity_masked(h, current_z)
}

/// Model-contrastive loss, averaged over the batch:
/// `−log(e^{s_g/τ} / (e^{s_g/τ} + e^{s_p/τ})) = softplus((s_p − s_g)/τ)`.
pub fn moon_from(
    g: &mut Graph,
    z: Var,
    z_global: Var,
    z_prev: Var,
    temperature: f64,
) -> Result<Var> {
    let zg = g.detach(z_global);
    let zp = g.detach(z_prev);
    let pos = g.row_cosine_masked(z, zg)?;
    let neg = g.row_cosine_masked(z, zp)?;
    let diff = g.sub(neg, pos)?;
    let scaled = g.scale(diff, 1.0 / temperature);
    let sp = g.softplus(scaled);
    Ok(g.mean(sp))
}

/// `Σ_i ‖w_i − anchor_i‖²` over the bound trainable tensors.
pub fn sq_dist_from(g: &mut Graph, model: &BoundModel, anchor: &ModelParams) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (&v, n) in model.vars().iter().zip(anchor.trainable()) {
        let d = g.sq_dist(v, &n.tensor)?;
        total = Some(match total {
            Some(t) => g.add(t, d)?,
            None => d,
        });
    }
    Ok(total.expect("model has parameters"))
}

/// FedProx proximal term `(μ/2)·‖w − w_global‖²`.
pub fn proximal_from(
    g: &mut Graph,
    model: &BoundModel,
    global: &ModelParams,
    mu: f64,
) -> Result<Var> {
    let d = sq_dist_from(g, model, global)?;
    Ok(g.scale(d, mu / 2.0))
}

pub fn loss_ce(g: &mut Graph, model: &BoundModel, x: &Tensor, labels: &[usize]) -> Result<Var> {
    let x = g.constant(x.clone());
    let logits = model.forward_logits(g, x)?;
    g.softmax_cross_entropy(logits, labels)
}

/// History loss with the current model run in `mode` and the history model
/// in eval mode.
pub fn loss_hist(
    g: &mut Graph,
    current: &BoundModel,
    mode: Mode,
    history: &ModelParams,
    x: &Tensor,
    record: &mut BnRecord,
) -> Result<Var> {
    let xv = g.constant(x.clone());
    let cur = views(g, current, xv, mode, record, Want::REPR)?;
    let hist = history.bind(g, false);
    let h = views(
        g,
        &hist,
        xv,
        Mode::Eval,
        &mut BnRecord::default(),
        Want::REPR,
    )?;
    hist_from(g, cur.z, h.z)
}

/// Symmetrized stop-gradient loss with each model run in its given mode.
pub fn loss_stop(
    g: &mut Graph,
    local: (&BoundModel, Mode),
    global_copy: (&BoundModel, Mode),
    x: &Tensor,
) -> Result<StopLoss> {
    let xv = g.constant(x.clone());
    let mut rec = BnRecord::default();
    let l = views(g, local.0, xv, local.1, &mut rec, Want::PRED)?;
    let gc = views(g, global_copy.0, xv, global_copy.1, &mut rec, Want::PRED)?;
    stop_from(g, &l, &gc)
}

/// Eval-mode value of the stop-gradient loss between two models.
pub fn eval_loss_stop(local: &ModelParams, global_copy: &ModelParams, x: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let l = local.bind(&mut g, false);
    let gc = global_copy.bind(&mut g, false);
    let s = loss_stop(&mut g, (&l, Mode::Eval), (&gc, Mode::Eval), x)?;
    Ok(g.value(s.total).item())
}
