//! Measurements shared by the focused tests and the acceptance runner.

use fedsiam::aggregation::{aggregate_uniform, dual_aggregate, similarity_weights};
use fedsiam::data::dirichlet_partition;
use fedsiam::harness::{AggregationMode, Federation, FederationConfig, RunOutput};
use fedsiam::nn::ModelParams;
use fedsiam::training::{eval_loss_stop, GlobalCopyUpdate, Strategy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{bits, random_model, small_config, tiny_encoder};

/// Trainable parameters of the global model and every client after each round.
pub fn trajectory(cfg: FederationConfig) -> Vec<Vec<Vec<u64>>> {
    let mut fed = Federation::from_config(cfg).unwrap();
    let mut out = Vec::new();
    for _ in 0..fed.config().rounds {
        fed.step().unwrap();
        let mut snap = vec![bits(&fed.global().flatten())];
        snap.extend(fed.clients().iter().map(|c| bits(&c.local_model.flatten())));
        out.push(snap);
    }
    out
}

/// Each μ = 0 variant against FedAvg: 3 rounds, K = 3, one seed.
pub fn reductions(seed: u64) -> Vec<(&'static str, bool)> {
    let base = FederationConfig {
        rounds: 3,
        clients: 3,
        aggregation: AggregationMode::Weighted,
        ..small_config(seed)
    };
    let with = |strategy, update| FederationConfig {
        strategy,
        mu: 0.0,
        global_copy_update: update,
        ..base.clone()
    };
    let reference = trajectory(with(Strategy::FedAvg, GlobalCopyUpdate::Off));
    [
        (
            "fedsiam_da (mu=0, global copy off)",
            with(Strategy::FedSiamDa, GlobalCopyUpdate::Off),
        ),
        (
            "fedprox (mu=0)",
            with(Strategy::FedProx, GlobalCopyUpdate::Off),
        ),
        ("moon (mu=0)", with(Strategy::Moon, GlobalCopyUpdate::Off)),
    ]
    .into_iter()
    .map(|(name, cfg)| (name, trajectory(cfg) == reference))
    .collect()
}

/// Stop-gradient loss between local model and global copy on a fixed
/// evaluation batch, before and after one FedSiam-DA round on client 0.
pub fn alignment_trial(seed: u64) -> (f64, f64) {
    let cfg = FederationConfig {
        rounds: 1,
        seed,
        record_time: false,
        ..FederationConfig::default()
    };
    let mut fed = Federation::from_config(cfg).unwrap();
    let eval: Vec<usize> = (0..256).collect();
    let (x, _) = fed.test_set().batch(&eval);
    let start = eval_loss_stop(fed.global(), fed.global(), &x).unwrap();
    fed.step().unwrap();
    let client = &fed.clients()[0];
    let copy = client
        .global_copy
        .as_ref()
        .expect("fedsiam keeps its global copy");
    let end = eval_loss_stop(&client.local_model, copy, &x).unwrap();
    (start, end)
}

pub struct AggregationOracles {
    /// Largest |Σξ − 1| over random sets.
    pub sum_error: f64,
    /// Identical clients give ξ = 1/K bit for bit and return the input.
    pub identical_exact: bool,
    /// Largest |ξ − brute force| over random sets.
    pub brute_force_error: f64,
    /// Every coordinate of w^f within [min, max] of the locals.
    pub in_hull: bool,
}

fn brute_force_weights(models: &[ModelParams]) -> Vec<f64> {
    let flats: Vec<Vec<f64>> = models.iter().map(ModelParams::flatten).collect();
    let k = flats.len() as f64;
    let n = flats[0].len();
    let mean: Vec<f64> = (0..n)
        .map(|i| flats.iter().map(|f| f[i]).sum::<f64>() / k)
        .collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let s: Vec<f64> = flats
        .iter()
        .map(|f| {
            let dot: f64 = f.iter().zip(&mean).map(|(a, b)| a * b).sum();
            (dot / (norm(f) * norm(&mean))).max(1e-6)
        })
        .collect();
    let total: f64 = s.iter().sum();
    s.iter().map(|x| x / total).collect()
}

pub fn aggregation_oracles(trials: usize) -> AggregationOracles {
    let cfg = tiny_encoder(5, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut out = AggregationOracles {
        sum_error: 0.0,
        identical_exact: true,
        brute_force_error: 0.0,
        in_hull: true,
    };
    for t in 0..trials {
        let k = rng.random_range(1..=8);
        let models: Vec<ModelParams> = (0..k)
            .map(|i| random_model(&cfg, (t * 100 + i) as u64))
            .collect();
        let report = dual_aggregate(&models).unwrap();
        out.sum_error = out
            .sum_error
            .max((report.weights.iter().sum::<f64>() - 1.0).abs());
        let uniform = aggregate_uniform(&models).unwrap();
        let direct = similarity_weights(&models, &uniform).unwrap();
        for (a, b) in brute_force_weights(&models).iter().zip(&direct) {
            out.brute_force_error = out.brute_force_error.max((a - b).abs());
        }
        let flats: Vec<Vec<f64>> = models.iter().map(ModelParams::flatten).collect();
        for (i, v) in report.final_global.flatten().iter().enumerate() {
            let lo = flats.iter().map(|f| f[i]).fold(f64::INFINITY, f64::min);
            let hi = flats.iter().map(|f| f[i]).fold(f64::NEG_INFINITY, f64::max);
            out.in_hull &= lo <= *v && *v <= hi;
        }
        let same = vec![models[0].clone(); k];
        let r = dual_aggregate(&same).unwrap();
        out.identical_exact &= r.weights.iter().all(|&w| w == 1.0 / k as f64)
            && bits(&r.final_global.flatten()) == bits(&models[0].flatten());
    }
    out
}

pub struct PartitionStats {
    pub cover_ok: usize,
    pub cover_draws: usize,
    /// Largest relative deviation of a client's class share from 1/C at huge β.
    pub uniform_deviation: f64,
    /// Mean over seeds and classes of the largest single-client share at β = 0.1.
    pub mean_max_share: f64,
}

fn labels(classes: usize, per_class: usize) -> Vec<usize> {
    (0..classes)
        .flat_map(|c| std::iter::repeat_n(c, per_class))
        .collect()
}

pub fn partition_stats() -> PartitionStats {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cover_ok = 0;
    for draw in 0..100 {
        let classes = rng.random_range(2..=10);
        let per_class = rng.random_range(20..=80);
        let k = rng.random_range(2..=6);
        let beta = [0.1, 0.3, 1.0, 10.0][draw % 4];
        let y = labels(classes, per_class);
        let p = dirichlet_partition(&y, k, beta, draw as u64, 2).unwrap();
        cover_ok += usize::from(p.is_set_partition_of(y.len()));
    }

    let y = labels(10, 200);
    let p = dirichlet_partition(&y, 10, 1e6, 3, 10).unwrap();
    let mut uniform_deviation: f64 = 0.0;
    for h in p.histograms(&y, 10) {
        let n: usize = h.iter().sum();
        for &c in &h {
            let share = c as f64 / n as f64;
            uniform_deviation = uniform_deviation.max((share - 0.1).abs() / 0.1);
        }
    }

    let mut total = 0.0;
    for seed in 0..50 {
        let p = dirichlet_partition(&y, 10, 0.1, seed, 10).unwrap();
        let hist = p.histograms(&y, 10);
        for c in 0..10 {
            let max = hist.iter().map(|h| h[c]).max().unwrap();
            total += max as f64 / 200.0;
        }
    }
    PartitionStats {
        cover_ok,
        cover_draws: 100,
        uniform_deviation,
        mean_max_share: total / 500.0,
    }
}

/// Desk-scale run for one strategy and seed; timing off so output is reproducible.
pub fn desk_config(strategy: Strategy, seed: u64) -> FederationConfig {
    let aggregation = match strategy {
        Strategy::FedSiamDa => AggregationMode::Dual,
        _ => AggregationMode::Weighted,
    };
    FederationConfig {
        strategy,
        aggregation,
        seed,
        record_time: false,
        ..FederationConfig::default()
    }
}

pub fn desk_run(strategy: Strategy, seed: u64) -> RunOutput {
    fedsiam::harness::run_federation(&desk_config(strategy, seed)).unwrap()
}

/// Standard deviation of successive differences of the global test loss.
pub fn loss_roughness(run: &RunOutput) -> f64 {
    let loss: Vec<f64> = run.metrics.iter().map(|m| m.global_test_loss).collect();
    let d: Vec<f64> = loss.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn final_acc(run: &RunOutput) -> f64 {
    run.metrics
        .last()
        .expect("at least one round")
        .global_test_acc
}
