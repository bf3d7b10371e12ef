//! Shared oracles and fixtures for the integration tests.
#![allow(dead_code)]

pub mod criteria;
pub mod gradcheck;

use fedsiam::autodiff::{Graph, Tensor, Var};
use fedsiam::data::{synth_blobs, Dataset};
use fedsiam::harness::{DatasetSpec, FederationConfig};
use fedsiam::nn::{EncoderConfig, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

/// Norm-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖)`; 0 when both vanish.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x`.
pub fn central_diff(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + FD_STEP;
            let up = f(&p);
            p[i] = orig - FD_STEP;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// Worst relative error between backward and central differences for a
/// scalar graph built from `inputs`, each bound as a parameter.
pub fn check_op(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss).unwrap().wrt(&vars);
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        let numeric = central_diff(t.data(), |x| {
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, u)| {
                    if j == i {
                        g.param(Tensor::new(u.shape().to_vec(), x.to_vec()).unwrap())
                    } else {
                        g.param(u.clone())
                    }
                })
                .collect();
            let l = build(&mut g, &vars);
            g.value(l).item()
        });
        worst = worst.max(rel_err(grads[i].data(), &numeric));
    }
    worst
}

pub fn tiny_encoder(input_dim: usize, classes: usize) -> EncoderConfig {
    EncoderConfig {
        input_dim,
        backbone_hidden: vec![6],
        projection_hidden: 5,
        projection_dim: 4,
        prediction_hidden: 3,
        num_classes: classes,
    }
}

/// Initialized model with every trainable value (biases included) jittered,
/// so that no unit sits on a ReLU kink or emits an all-zero row.
pub fn random_model(cfg: &EncoderConfig, seed: u64) -> ModelParams {
    let m = ModelParams::init(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let flat: Vec<f64> = m
        .flatten()
        .iter()
        .map(|v| v + rng.random_range(-0.3..0.3))
        .collect();
    m.unflatten(&flat).unwrap()
}

pub fn random_batch(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Tensor {
    random_tensor(rng, &[rows, dim], 1.0)
}

/// Small blobs federation used by the reduction and harness tests.
pub fn small_config(seed: u64) -> FederationConfig {
    FederationConfig {
        dataset: DatasetSpec::Blobs {
            classes: 4,
            per_class: 40,
            dim: 8,
            spread: 0.3,
        },
        clients: 3,
        rounds: 3,
        local_epochs: 2,
        batch_size: 8,
        min_samples: 10,
        seed,
        backbone_hidden: vec![12],
        projection_hidden: 8,
        projection_dim: 6,
        prediction_hidden: 4,
        ..FederationConfig::default()
    }
}

pub fn small_blobs(seed: u64) -> Dataset {
    synth_blobs(4, 40, 8, 0.3, seed).unwrap()
}

/// Exact bit patterns, so `-0.0` and `0.0` are distinguished.
pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}
