//! Client-side local training for FedAvg, FedProx, MOON and FedSiam-DA.

mod local;
mod losses;

pub use local::{
    epoch_batches, local_round, local_round_fedavg, local_round_fedprox, local_round_fedsiam,
    local_round_moon, ClientState, GlobalCopyUpdate, RoundContext, Strategy, StrategyConfig,
};
pub use losses::{
    eval_loss_stop, hist_from, loss_ce, loss_hist, loss_stop, moon_from, neg_cos_stopped,
    proximal_from, sq_dist_from, stop_from, views, StopLoss, Views, Want,
};
