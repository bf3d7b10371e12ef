use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Unit-norm class centres. They depend only on `(classes, dim)`, so train and
/// test sets drawn with different seeds share one geometry.
pub fn class_centres(classes: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        0,
        "blob-centres",
        &[classes as u64, dim as u64],
    ));
    (0..classes)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Gaussian blobs: `per_class` samples around each class centre with
/// isotropic noise of standard deviation `spread`. Samples are class-major.
pub fn synth_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 || dim < 2 || per_class == 0 || spread.is_nan() || spread < 0.0 {
        return Err(Error::Config(format!(
            "blobs need classes >= 2, dim >= 2, per_class >= 1, spread >= 0; got {classes}, {dim}, {per_class}, {spread}"
        )));
    }
    let centres = class_centres(classes, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, centre) in centres.iter().enumerate() {
        for _ in 0..per_class {
            for &m in centre {
                let noise: f64 = StandardNormal.sample(&mut rng);
                features.push(m + spread * noise);
            }
            labels.push(c);
        }
    }
    Dataset::new(features, labels, dim, classes)
}
