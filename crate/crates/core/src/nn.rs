//! Client network: MLP backbone, classifier head on the backbone features,
//! 2-layer projection MLP producing the representation `z`, and a 2-layer
//! prediction MLP producing `p`.
//!
//! ```text
//! x ─ backbone ─┬─ classifier ─ logits
//!               └─ projection ─ z ─ prediction ─ p
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchStats, Graph, Mode, Tensor, Var};
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub backbone_hidden: Vec<usize>,
    pub projection_hidden: usize,
    pub projection_dim: usize,
    pub prediction_hidden: usize,
    pub num_classes: usize,
}

impl EncoderConfig {
    /// Desk-scale layout for the given input width and class count.
    pub fn desk(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            backbone_hidden: vec![128, 64],
            projection_hidden: 64,
            projection_dim: 32,
            prediction_hidden: 16,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.input_dim,
            self.projection_hidden,
            self.projection_dim,
            self.prediction_hidden,
            self.num_classes,
        ];
        if widths.iter().chain(&self.backbone_hidden).any(|&w| w == 0) {
            return Err(Error::Config(format!(
                "all layer widths must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone_hidden
            .last()
            .copied()
            .unwrap_or(self.input_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Indices into the canonical trainable-parameter list.
#[derive(Debug, Clone, Copy)]
struct Mlp2 {
    w0: usize,
    b0: usize,
    gamma: usize,
    beta: usize,
    w1: usize,
    b1: usize,
}

const PROJECTION_BN: usize = 0;
const PREDICTION_BN: usize = 1;

/// Complete parameter set of one network, in a stable canonical order.
///
/// Trainable order: backbone layers, classifier, projection MLP, prediction
/// MLP. Running batch-norm statistics are kept apart and never flattened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    config: EncoderConfig,
    trainable: Vec<NamedTensor>,
    running: Vec<NamedTensor>,
}

fn named(name: impl Into<String>, tensor: Tensor) -> NamedTensor {
    NamedTensor {
        name: name.into(),
        tensor,
    }
}

impl ModelParams {
    /// Uniform(±1/√fan_in) weights, zero biases, unit gamma, zero beta.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trainable = Vec::new();
        let mut linear = |name: &str, fan_in: usize, fan_out: usize, out: &mut Vec<NamedTensor>| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            out.push(named(
                format!("{name}.weight"),
                Tensor::matrix(fan_in, fan_out, w).expect("shape"),
            ));
            out.push(named(format!("{name}.bias"), Tensor::zeros(&[fan_out])));
        };
        let mut width = cfg.input_dim;
        for (i, &h) in cfg.backbone_hidden.iter().enumerate() {
            linear(&format!("backbone.{i}"), width, h, &mut trainable);
            width = h;
        }
        linear("classifier", width, cfg.num_classes, &mut trainable);
        for (name, fan_in, hidden, fan_out) in [
            (
                "projection",
                width,
                cfg.projection_hidden,
                cfg.projection_dim,
            ),
            (
                "prediction",
                cfg.projection_dim,
                cfg.prediction_hidden,
                cfg.projection_dim,
            ),
        ] {
            linear(&format!("{name}.0"), fan_in, hidden, &mut trainable);
            trainable.push(named(
                format!("{name}.bn.gamma"),
                Tensor::filled(&[hidden], 1.0),
            ));
            trainable.push(named(format!("{name}.bn.beta"), Tensor::zeros(&[hidden])));
            linear(&format!("{name}.1"), hidden, fan_out, &mut trainable);
        }
        let running = vec![
            named(
                "projection.bn.running_mean",
                Tensor::zeros(&[cfg.projection_hidden]),
            ),
            named(
                "projection.bn.running_var",
                Tensor::filled(&[cfg.projection_hidden], 1.0),
            ),
            named(
                "prediction.bn.running_mean",
                Tensor::zeros(&[cfg.prediction_hidden]),
            ),
            named(
                "prediction.bn.running_var",
                Tensor::filled(&[cfg.prediction_hidden], 1.0),
            ),
        ];
        Ok(Self {
            config: cfg.clone(),
            trainable,
            running,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn trainable(&self) -> &[NamedTensor] {
        &self.trainable
    }

    pub fn running(&self) -> &[NamedTensor] {
        &self.running
    }

    pub fn trainable_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.trainable.iter_mut().map(|n| &mut n.tensor)
    }

    pub fn running_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.running.iter_mut().map(|n| &mut n.tensor)
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable.iter().map(|n| n.tensor.numel()).sum()
    }

    /// Whether `other` has the same tensor names and shapes in the same order.
    pub fn same_layout(&self, other: &ModelParams) -> bool {
        let eq = |a: &[NamedTensor], b: &[NamedTensor]| {
            a.len() == b.len()
                && a.iter()
                    .zip(b)
                    .all(|(x, y)| x.name == y.name && x.tensor.shape() == y.tensor.shape())
        };
        eq(&self.trainable, &other.trainable) && eq(&self.running, &other.running)
    }

    /// Concatenation of the trainable tensors in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_trainable());
        for n in &self.trainable {
            out.extend_from_slice(n.tensor.data());
        }
        out
    }

    /// Copy of `self` with trainable values replaced by `flat`.
    pub fn unflatten(&self, flat: &[f64]) -> Result<ModelParams> {
        if flat.len() != self.num_trainable() {
            return Err(Error::Dimension {
                op: "unflatten",
                lhs: vec![self.num_trainable()],
                rhs: vec![flat.len()],
            });
        }
        let mut out = self.clone();
        let mut offset = 0;
        for t in out.trainable_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(out)
    }

    pub fn flatten_running(&self) -> Vec<f64> {
        self.running
            .iter()
            .flat_map(|n| n.tensor.data().iter().copied())
            .collect()
    }

    pub fn set_running(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.running.iter().map(|n| n.tensor.numel()).sum();
        if flat.len() != total {
            return Err(Error::Dimension {
                op: "set_running",
                lhs: vec![total],
                rhs: vec![flat.len()],
            });
        }
        let mut offset = 0;
        for t in self.running_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.trainable
            .iter()
            .chain(&self.running)
            .all(|n| n.tensor.is_finite())
    }

    fn mlp(&self, which: usize) -> Mlp2 {
        let base = 2 * (self.config.backbone_hidden.len() + 1) + 6 * which;
        Mlp2 {
            w0: base,
            b0: base + 1,
            gamma: base + 2,
            beta: base + 3,
            w1: base + 4,
            b1: base + 5,
        }
    }

    /// Folds recorded train-mode batch statistics into the running statistics.
    pub fn update_running_stats(&mut self, record: &BnRecord) {
        for (layer, stats) in &record.0 {
            let (mean, var) = self.running.split_at_mut(2 * layer + 1);
            let mean = &mut mean[2 * layer].tensor;
            let var = &mut var[0].tensor;
            for (m, &b) in mean.data_mut().iter_mut().zip(&stats.mean) {
                *m = BN_MOMENTUM * *m + (1.0 - BN_MOMENTUM) * b;
            }
            for (v, &b) in var.data_mut().iter_mut().zip(&stats.var) {
                *v = BN_MOMENTUM * *v + (1.0 - BN_MOMENTUM) * b;
            }
        }
    }

    /// Places the parameters on `g` as trainable leaves or as constants.
    pub fn bind<'m>(&'m self, g: &mut Graph, trainable: bool) -> BoundModel<'m> {
        let vars = self
            .trainable
            .iter()
            .map(|n| {
                if trainable {
                    g.param(n.tensor.clone())
                } else {
                    g.constant(n.tensor.clone())
                }
            })
            .collect();
        BoundModel { model: self, vars }
    }
}

/// Batch statistics gathered during train-mode forwards.
#[derive(Debug, Default, Clone)]
pub struct BnRecord(Vec<(usize, BatchStats)>);

impl BnRecord {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A [`ModelParams`] placed on a graph.
#[derive(Debug)]
pub struct BoundModel<'m> {
    model: &'m ModelParams,
    vars: Vec<Var>,
}

impl BoundModel<'_> {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn model(&self) -> &ModelParams {
        self.model
    }

    fn check_width(&self, g: &Graph, x: Var, width: usize, op: &'static str) -> Result<()> {
        let shape = g.value(x).shape();
        if shape.len() != 2 || shape[1] != width {
            return Err(Error::Dimension {
                op,
                lhs: shape.to_vec(),
                rhs: vec![width],
            });
        }
        Ok(())
    }

    fn linear(&self, g: &mut Graph, x: Var, w: usize, b: usize) -> Result<Var> {
        let h = g.matmul(x, self.vars[w])?;
        g.add_row(h, self.vars[b])
    }

    pub fn backbone(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.check_width(g, x, self.model.config.input_dim, "backbone")?;
        let mut h = x;
        for i in 0..self.model.config.backbone_hidden.len() {
            let a = self.linear(g, h, 2 * i, 2 * i + 1)?;
            h = g.relu(a);
        }
        Ok(h)
    }

    pub fn classify(&self, g: &mut Graph, features: Var) -> Result<Var> {
        let base = 2 * self.model.config.backbone_hidden.len();
        self.linear(g, features, base, base + 1)
    }

    fn mlp2(
        &self,
        g: &mut Graph,
        x: Var,
        which: usize,
        mode: Mode,
        record: &mut BnRecord,
    ) -> Result<Var> {
        let l = self.model.mlp(which);
        let h = self.linear(g, x, l.w0, l.b0)?;
        let (gamma, beta) = (self.vars[l.gamma], self.vars[l.beta]);
        let normed = match mode {
            Mode::Train => {
                let (out, stats) = g.batch_norm_train(h, gamma, beta)?;
                record.0.push((which, stats));
                out
            }
            Mode::Eval => {
                let running = &self.model.running;
                g.batch_norm_eval(
                    h,
                    gamma,
                    beta,
                    running[2 * which].tensor.data(),
                    running[2 * which + 1].tensor.data(),
                )?
            }
        };
        let a = g.relu(normed);
        self.linear(g, a, l.w1, l.b1)
    }

    /// Projection MLP applied to backbone features.
    pub fn project(
        &self,
        g: &mut Graph,
        features: Var,
        mode: Mode,
        record: &mut BnRecord,
    ) -> Result<Var> {
        self.mlp2(g, features, PROJECTION_BN, mode, record)
    }

    /// Representation `z = projection(backbone(x))`.
    pub fn forward_repr(
        &self,
        g: &mut Graph,
        x: Var,
        mode: Mode,
        record: &mut BnRecord,
    ) -> Result<Var> {
        let f = self.backbone(g, x)?;
        self.project(g, f, mode, record)
    }

    /// Prediction `p = h(z)`; the output layer has neither BN nor ReLU.
    pub fn forward_pred(
        &self,
        g: &mut Graph,
        z: Var,
        mode: Mode,
        record: &mut BnRecord,
    ) -> Result<Var> {
        self.check_width(g, z, self.model.config.projection_dim, "prediction")?;
        self.mlp2(g, z, PREDICTION_BN, mode, record)
    }

    pub fn forward_logits(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let f = self.backbone(g, x)?;
        self.classify(g, f)
    }
}
