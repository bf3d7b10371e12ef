//! Server-side model combination.
//!
//! All routines work on the flattened trainable vector; running batch-norm
//! statistics of the result are the uniform mean of the inputs' statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// Floor applied to cosine similarities before they are normalized.
pub const SIMILARITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregationReport {
    pub first_global: ModelParams,
    /// Raw cosine similarity of each local model to `first_global`.
    pub similarities: Vec<f64>,
    /// Normalized weights `ξ`.
    pub weights: Vec<f64>,
    /// Number of similarities raised to [`SIMILARITY_FLOOR`].
    pub clamped: usize,
    pub final_global: ModelParams,
}

fn check_layouts(models: &[ModelParams]) -> Result<&ModelParams> {
    let first = models
        .first()
        .ok_or_else(|| Error::Aggregation("no models to aggregate".into()))?;
    if let Some(i) = models.iter().position(|m| !m.same_layout(first)) {
        return Err(Error::Aggregation(format!(
            "model {i} does not share the layout of model 0"
        )));
    }
    Ok(first)
}

/// `Σ_k weights[k]·w^k` over trainable values; running stats are averaged uniformly.
///
/// Evaluated as `w^0 + Σ_k weights[k]·(w^k − w^0)`, which equals the plain
/// sum when the weights sum to one and returns identical inputs bit for bit.
fn combine(models: &[ModelParams], weights: &[f64]) -> Result<ModelParams> {
    let first = check_layouts(models)?;
    let anchor = first.flatten();
    let mut delta = vec![0.0; anchor.len()];
    for (m, &w) in models.iter().zip(weights).skip(1) {
        for ((acc, v), a) in delta.iter_mut().zip(m.flatten()).zip(&anchor) {
            *acc += w * (v - a);
        }
    }
    let flat: Vec<f64> = anchor.iter().zip(&delta).map(|(a, d)| a + d).collect();
    let mut out = first.unflatten(&flat)?;
    let k = models.len() as f64;
    let anchor = first.flatten_running();
    let mut running = anchor.clone();
    for m in &models[1..] {
        for ((acc, v), a) in running.iter_mut().zip(m.flatten_running()).zip(&anchor) {
            *acc += (v - a) / k;
        }
    }
    out.set_running(&running)?;
    Ok(out)
}

/// Elementwise mean `(1/K)·Σ w^k`.
pub fn aggregate_uniform(models: &[ModelParams]) -> Result<ModelParams> {
    let k = models.len().max(1) as f64;
    combine(models, &vec![1.0 / k; models.len()])
}

/// `Σ (n^k/Σn)·w^k`.
pub fn aggregate_weighted(models: &[ModelParams], counts: &[usize]) -> Result<ModelParams> {
    let total: usize = counts.iter().sum();
    if counts.len() != models.len() {
        return Err(Error::Config(format!(
            "{} counts for {} models",
            counts.len(),
            models.len()
        )));
    }
    if total == 0 {
        return Err(Error::Config("sample counts sum to zero".into()));
    }
    let weights: Vec<f64> = counts.iter().map(|&n| n as f64 / total as f64).collect();
    combine(models, &weights)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Raw cosine similarity of each model to `reference` on flattened trainables.
pub fn cosine_similarities(models: &[ModelParams], reference: &ModelParams) -> Result<Vec<f64>> {
    check_layouts(models)?;
    let r = reference.flatten();
    let nr = norm(&r);
    if nr == 0.0 {
        return Err(Error::DegenerateModel {
            index: models.len(),
        });
    }
    models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let v = m.flatten();
            let nv = norm(&v);
            if nv == 0.0 {
                return Err(Error::DegenerateModel { index: i });
            }
            let dot: f64 = v.iter().zip(&r).map(|(a, b)| a * b).sum();
            Ok((dot / (nv * nr)).clamp(-1.0, 1.0))
        })
        .collect()
}

/// Normalizes floored similarities into weights that sum to one.
pub fn weights_from_similarities(similarities: &[f64]) -> (Vec<f64>, usize) {
    let clamped = similarities
        .iter()
        .filter(|&&s| s < SIMILARITY_FLOOR)
        .count();
    let floored: Vec<f64> = similarities
        .iter()
        .map(|&s| s.max(SIMILARITY_FLOOR))
        .collect();
    // ξ_k = s_k / Σ_j s_j, written as 1 / Σ_j (s_j / s_k) so equal
    // similarities give exactly 1/K
    let weights = floored
        .iter()
        .map(|&sk| 1.0 / floored.iter().map(|&sj| sj / sk).sum::<f64>())
        .collect();
    (weights, clamped)
}

/// Dynamic weights `ξ` of each local model relative to `first_global`.
pub fn similarity_weights(models: &[ModelParams], first_global: &ModelParams) -> Result<Vec<f64>> {
    let s = cosine_similarities(models, first_global)?;
    Ok(weights_from_similarities(&s).0)
}

/// Uniform first aggregation, then re-aggregation with similarity weights.
pub fn dual_aggregate(models: &[ModelParams]) -> Result<AggregationReport> {
    let first_global = aggregate_uniform(models)?;
    let similarities = cosine_similarities(models, &first_global)?;
    let (weights, clamped) = weights_from_similarities(&similarities);
    let final_global = combine(models, &weights)?;
    Ok(AggregationReport {
        first_global,
        similarities,
        weights,
        clamped,
        final_global,
    })
}
