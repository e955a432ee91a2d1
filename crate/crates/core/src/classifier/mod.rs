//! Reference multi-label classifier over feature vectors.
//!
//! A fixed feature transform (identity or a seeded random projection) stands
//! in for a pre-trained backbone. On top of it sits a trainable head of at
//! most two dense layers (an optional `tanh` hidden layer and the output layer
//! producing one logit per label). Only the head is ever updated.
//!
//! Training minimises the sigmoid cross-entropy averaged over the batch and
//! summed over labels, with mini-batch SGD and classical momentum.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LabelCombination, LabelSchema, ProbabilityVector, Sample, StateMatrix};

/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` before taking logs.
pub const CLAMP: f64 = 1e-12;

const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Width of the optional hidden layer. `None` gives one logistic
    /// regression per label.
    #[serde(default)]
    pub hidden_width: Option<usize>,
    /// Output width of the frozen random projection. `None` is the identity.
    #[serde(default)]
    pub projection_dim: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            momentum: 0.9,
            batch_size: 32,
            epochs: 5,
            seed: 0,
            hidden_width: None,
            projection_dim: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.hidden_width == Some(0) || self.projection_dim == Some(0) {
            return Err(Error::InvalidConfig("layer widths must be at least 1".into()));
        }
        Ok(())
    }
}

/// Feature transform that never changes after initialization.
#[derive(Debug, Clone, PartialEq)]
pub enum FrozenStage {
    Identity,
    /// Row-major `out_dim x in_dim` matrix.
    Projection {
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
    },
}

impl FrozenStage {
    pub fn out_dim(&self, in_dim: usize) -> usize {
        match self {
            FrozenStage::Identity => in_dim,
            FrozenStage::Projection { out_dim, .. } => *out_dim,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            FrozenStage::Identity => x.to_vec(),
            FrozenStage::Projection {
                in_dim, weights, ..
            } => weights.chunks_exact(*in_dim).map(|row| dot(row, x)).collect(),
        }
    }

    /// Little-endian bytes of every parameter, for byte-exact comparisons.
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            FrozenStage::Identity => Vec::new(),
            FrozenStage::Projection { weights, .. } => {
                weights.iter().flat_map(|w| w.to_le_bytes()).collect()
            }
        }
    }
}

/// Fully connected layer, weights row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn uniform(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let bias = (0..out_dim).map(|_| rng.random_range(-bound..=bound)).collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias,
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| dot(row, x) + b)
            .collect()
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    schema: LabelSchema,
    feature_dim: usize,
    frozen: FrozenStage,
    hidden: Option<Dense>,
    output: Dense,
}

/// One training example: a feature vector and its target combination.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub features: &'a [f64],
    pub target: &'a LabelCombination,
}

impl<'a> Example<'a> {
    pub fn new(features: &'a [f64], target: &'a LabelCombination) -> Self {
        Self { features, target }
    }
}

impl<'a> From<(&'a Sample, &'a LabelCombination)> for Example<'a> {
    fn from((s, c): (&'a Sample, &'a LabelCombination)) -> Self {
        Self::new(&s.features, c)
    }
}

/// Seeded initialization. Each layer is drawn uniformly from
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn init_model(
    schema: &LabelSchema,
    feature_dim: usize,
    config: &TrainConfig,
) -> Result<ClassifierModel> {
    if feature_dim == 0 {
        return Err(Error::InvalidConfig("feature_dim must be at least 1".into()));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let frozen = match config.projection_dim {
        None => FrozenStage::Identity,
        Some(out_dim) => {
            let bound = 1.0 / (feature_dim as f64).sqrt();
            FrozenStage::Projection {
                in_dim: feature_dim,
                out_dim,
                weights: (0..out_dim * feature_dim)
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect(),
            }
        }
    };
    let mut width = frozen.out_dim(feature_dim);
    let hidden = config.hidden_width.map(|h| {
        let layer = Dense::uniform(width, h, &mut rng);
        width = h;
        layer
    });
    let output = Dense::uniform(width, schema.m(), &mut rng);
    Ok(ClassifierModel {
        schema: schema.clone(),
        feature_dim,
        frozen,
        hidden,
        output,
    })
}

impl ClassifierModel {
    pub(crate) fn from_parts(
        schema: LabelSchema,
        feature_dim: usize,
        frozen: FrozenStage,
        hidden: Option<Dense>,
        output: Dense,
    ) -> Result<Self> {
        let mut width = frozen.out_dim(feature_dim);
        if let FrozenStage::Projection { in_dim, .. } = &frozen {
            if *in_dim != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    got: *in_dim,
                });
            }
        }
        for layer in hidden.iter().chain(std::iter::once(&output)) {
            if layer.in_dim != width
                || layer.weights.len() != layer.in_dim * layer.out_dim
                || layer.bias.len() != layer.out_dim
            {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    got: layer.in_dim,
                });
            }
            width = layer.out_dim;
        }
        if output.out_dim != schema.m() {
            return Err(Error::DimensionMismatch {
                expected: schema.m(),
                got: output.out_dim,
            });
        }
        Ok(Self {
            schema,
            feature_dim,
            frozen,
            hidden,
            output,
        })
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.schema
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn frozen_stage(&self) -> &FrozenStage {
        &self.frozen
    }

    pub fn hidden(&self) -> Option<&Dense> {
        self.hidden.as_ref()
    }

    pub fn output(&self) -> &Dense {
        &self.output
    }

    pub fn num_labels(&self) -> usize {
        self.output.out_dim
    }

    /// Sets every head parameter to zero, so every probability becomes 0.5.
    pub fn zero_head(&mut self) {
        for layer in self.hidden.iter_mut().chain(std::iter::once(&mut self.output)) {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
            layer.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    /// Flattened head parameters: hidden weights, hidden bias, output weights,
    /// output bias.
    pub fn head_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.head_param_count());
        for layer in self.hidden.iter().chain(std::iter::once(&self.output)) {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_head_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.head_param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.head_param_count(),
                got: params.len(),
            });
        }
        let mut rest = params;
        for layer in self.hidden.iter_mut().chain(std::iter::once(&mut self.output)) {
            let (w, tail) = rest.split_at(layer.weights.len());
            let (b, tail) = tail.split_at(layer.bias.len());
            layer.weights.copy_from_slice(w);
            layer.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    pub fn head_param_count(&self) -> usize {
        self.hidden.as_ref().map_or(0, Dense::param_count) + self.output.param_count()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Logits for a vector already passed through the frozen stage.
    fn head_logits(&self, z: &[f64]) -> Vec<f64> {
        match &self.hidden {
            None => self.output.forward(z),
            Some(h) => {
                let a: Vec<f64> = h.forward(z).into_iter().map(f64::tanh).collect();
                self.output.forward(&a)
            }
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.head_logits(&self.frozen.apply(x)))
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<ProbabilityVector> {
        let p = self.logits(x)?.into_iter().map(sigmoid).collect();
        ProbabilityVector::new(p)
    }

    /// Mean sigmoid cross-entropy over `examples`.
    pub fn loss(&self, examples: &[Example<'_>]) -> Result<f64> {
        let mut logits = Vec::with_capacity(examples.len());
        let mut targets = Vec::with_capacity(examples.len());
        for ex in examples {
            logits.push(self.logits(ex.features)?);
            targets.push(ex.target.clone());
        }
        sigmoid_ce_loss(&logits, &targets)
    }

    /// Gradient of the mean loss over `batch` with respect to the flattened
    /// head parameters, plus the loss itself. `frozen_out` holds the frozen
    /// stage output of each example.
    fn loss_and_grad(
        &self,
        frozen_out: &[&[f64]],
        targets: &[&LabelCombination],
    ) -> (f64, Vec<f64>) {
        let n = frozen_out.len() as f64;
        let mut grad = vec![0.0; self.head_param_count()];
        let hidden_len = self.hidden.as_ref().map_or(0, Dense::param_count);
        let mut loss = 0.0;
        for (z, target) in frozen_out.iter().zip(targets) {
            let hidden_act = self
                .hidden
                .as_ref()
                .map(|h| h.forward(z).into_iter().map(f64::tanh).collect::<Vec<_>>());
            let out_in: &[f64] = hidden_act.as_deref().unwrap_or(z);
            let logits = self.output.forward(out_in);

            let mut delta = vec![0.0; logits.len()];
            for (j, (&x, y)) in logits.iter().zip(target.as_targets()).enumerate() {
                let (l, d) = ce_term(x, y);
                loss += l;
                delta[j] = d / n;
            }

            let out = &self.output;
            let (gw, gb) = grad[hidden_len..].split_at_mut(out.weights.len());
            for (j, &dj) in delta.iter().enumerate() {
                if dj == 0.0 {
                    continue;
                }
                for (g, &a) in gw[j * out.in_dim..(j + 1) * out.in_dim]
                    .iter_mut()
                    .zip(out_in)
                {
                    *g += dj * a;
                }
                gb[j] += dj;
            }

            if let (Some(h), Some(act)) = (&self.hidden, &hidden_act) {
                let (gw, gb) = grad[..hidden_len].split_at_mut(h.weights.len());
                for (k, &ak) in act.iter().enumerate() {
                    let back: f64 = delta
                        .iter()
                        .enumerate()
                        .map(|(j, &dj)| dj * out.weights[j * out.in_dim + k])
                        .sum();
                    let dk = back * (1.0 - ak * ak);
                    if dk == 0.0 {
                        continue;
                    }
                    for (g, &zi) in gw[k * h.in_dim..(k + 1) * h.in_dim].iter_mut().zip(z.iter())
                    {
                        *g += dk * zi;
                    }
                    gb[k] += dk;
                }
            }
        }
        (loss / n, grad)
    }

    /// Mini-batch SGD with momentum over seeded shuffled epochs. The frozen
    /// stage is never touched, so this is also the fine-tuning routine.
    pub fn train(&self, examples: &[Example<'_>], config: &TrainConfig) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Empty("training set"));
        }
        config.validate()?;
        let mut model = self.clone();
        if config.epochs == 0 {
            return Ok(model);
        }
        for ex in examples {
            self.check_dim(ex.features)?;
            ex.target.check_len(self.num_labels())?;
        }
        let frozen_out: Vec<Vec<f64>> = examples
            .iter()
            .map(|ex| self.frozen.apply(ex.features))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut params = model.head_params();
        let mut velocity = vec![0.0; params.len()];
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
                let zs: Vec<&[f64]> = chunk.iter().map(|&i| frozen_out[i].as_slice()).collect();
                let ts: Vec<&LabelCombination> = chunk.iter().map(|&i| examples[i].target).collect();
                let (loss, grad) = model.loss_and_grad(&zs, &ts);
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Diverged { epoch, batch });
                }
                for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                    *v = config.momentum * *v + g;
                    *p -= config.learning_rate * *v;
                }
                // saturated logits keep the clamped loss finite, so overflow
                // only shows up in the parameters
                if params.iter().any(|p| !p.is_finite()) {
                    return Err(Error::Diverged { epoch, batch });
                }
                model.set_head_params(&params)?;
            }
        }
        Ok(model)
    }

    /// Same update as [`train`](Self::train); the frozen stage stays
    /// bit-identical.
    pub fn fine_tune(&self, batch: &[Example<'_>], config: &TrainConfig) -> Result<Self> {
        self.train(batch, config)
    }

    /// One probability row per sample, in input order. The returned matrix
    /// has iteration 0; callers stamp their own iteration.
    pub fn predict_proba(&self, samples: &[&Sample]) -> Result<StateMatrix> {
        let mut ids = Vec::with_capacity(samples.len());
        let mut rows = Vec::with_capacity(samples.len());
        for s in samples {
            ids.push(s.id.clone());
            rows.push(self.predict_one(&s.features)?);
        }
        StateMatrix::new(ids, rows, 0)
    }

    /// Largest relative error between the analytic head gradient and a
    /// central finite difference with step `1e-5`, over every head parameter.
    ///
    /// The relative error of one parameter is `|a - n| / max(|a|, |n|, 1e-8)`.
    pub fn grad_check(&self, batch: &[Example<'_>]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("gradient check batch"));
        }
        let frozen_out: Vec<Vec<f64>> = batch.iter().map(|ex| self.frozen.apply(ex.features)).collect();
        let zs: Vec<&[f64]> = frozen_out.iter().map(Vec::as_slice).collect();
        let ts: Vec<&LabelCombination> = batch.iter().map(|ex| ex.target).collect();
        let (_, analytic) = self.loss_and_grad(&zs, &ts);

        let base = self.head_params();
        let mut probe = self.clone();
        let mut params = base.clone();
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            params[i] = base[i] + FD_STEP;
            probe.set_head_params(&params)?;
            let plus = probe.loss(batch)?;
            params[i] = base[i] - FD_STEP;
            probe.set_head_params(&params)?;
            let minus = probe.loss(batch)?;
            params[i] = base[i];
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        Ok(worst)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss and d(loss)/d(logit) for one label. Inside the clamp region the
/// derivative is zero.
fn ce_term(logit: f64, target: f64) -> (f64, f64) {
    let p = sigmoid(logit);
    let clamped = p.clamp(CLAMP, 1.0 - CLAMP);
    let loss = -(target * clamped.ln() + (1.0 - target) * (1.0 - clamped).ln());
    let d = if p == clamped { p - target } else { 0.0 };
    (loss, d)
}

/// Sigmoid cross-entropy, averaged over the batch and summed over labels.
pub fn sigmoid_ce_loss(logits: &[Vec<f64>], targets: &[LabelCombination]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::Empty("loss batch"));
    }
    if logits.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: logits.len(),
            got: targets.len(),
        });
    }
    let mut total = 0.0;
    for (x, y) in logits.iter().zip(targets) {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        total += x
            .iter()
            .zip(y.as_targets())
            .map(|(&xi, yi)| ce_term(xi, yi).0)
            .sum::<f64>();
    }
    Ok(total / logits.len() as f64)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
