//! Label-skewed splits across clients via per-class Dirichlet proportions.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;

pub const DEFAULT_MIN_SAMPLES: usize = 10;
const MAX_ATTEMPTS: u64 = 10_000;

/// `K` disjoint index lists covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    assignments: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(assignments: Vec<Vec<usize>>) -> Self {
        Self { assignments }
    }

    pub fn clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    pub fn client(&self, k: usize) -> &[usize] {
        &self.assignments[k]
    }

    /// Whether the lists are pairwise disjoint and cover exactly `0..n`.
    pub fn is_set_partition_of(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.assignments.iter().flatten() {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }

    /// Per-client class histograms.
    pub fn histograms(&self, labels: &[usize], classes: usize) -> Vec<Vec<usize>> {
        self.assignments
            .iter()
            .map(|idx| {
                let mut h = vec![0; classes];
                idx.iter().for_each(|&i| h[labels[i]] += 1);
                h
            })
            .collect()
    }
}

/// Integer counts summing to `total`, proportional to `weights`.
///
/// Floors first, then hands the remainder to the largest fractional parts
/// (ties to the lower index).
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Draws `q ~ Dir(beta · 1_k)` by normalizing independent Gamma(beta, 1) draws.
pub fn sample_dirichlet<R: Rng>(rng: &mut R, beta: f64, k: usize) -> Vec<f64> {
    let gamma = Gamma::new(beta, 1.0).expect("beta > 0");
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        // tiny beta can underflow every draw to zero
        if sum > 0.0 && sum.is_finite() {
            return draws.into_iter().map(|d| d / sum).collect();
        }
    }
}

/// For each class, splits its (shuffled) indices across clients in
/// proportions drawn from `Dir(beta)`. The whole partition is redrawn until
/// every client holds at least `min_samples` indices. Each client's list is
/// shuffled so that any suffix is a class-mixed sample.
pub fn dirichlet_partition(
    labels: &[usize],
    clients: usize,
    beta: f64,
    seed: u64,
    min_samples: usize,
) -> Result<Partition> {
    if clients < 2 {
        return Err(Error::Config(format!(
            "need at least 2 clients, got {clients}"
        )));
    }
    if beta.is_nan() || beta <= 0.0 || !beta.is_finite() {
        return Err(Error::Config(format!(
            "beta must be positive and finite, got {beta}"
        )));
    }
    if clients * min_samples > labels.len() {
        return Err(Error::Config(format!(
            "{clients} clients x {min_samples} min samples exceeds {} samples",
            labels.len()
        )));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng_for(seed, "partition", &[attempt]);
        let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); clients];
        for members in &by_class {
            if members.is_empty() {
                continue;
            }
            let mut members = members.clone();
            members.shuffle(&mut rng);
            let q = sample_dirichlet(&mut rng, beta, clients);
            let counts = largest_remainder(&q, members.len());
            let mut rest = members.as_slice();
            for (client, count) in assignments.iter_mut().zip(counts) {
                let (take, tail) = rest.split_at(count);
                client.extend_from_slice(take);
                rest = tail;
            }
        }
        if assignments.iter().all(|a| a.len() >= min_samples) {
            for a in &mut assignments {
                a.shuffle(&mut rng);
            }
            return Ok(Partition { assignments });
        }
    }
    Err(Error::Config(format!(
        "no Dir({beta}) partition over {clients} clients met min_samples={min_samples} in {MAX_ATTEMPTS} draws"
    )))
}
