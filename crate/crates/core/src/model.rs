//! Multinomial logistic regression and the local SGD trainer.
//!
//! Parameters are laid out class-major: for class `c` the slice
//! `[c * (F + 1) .. c * (F + 1) + F]` holds the feature weights and the
//! following entry holds the bias.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::seed::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub n_features: usize,
    pub n_classes: usize,
}

impl ModelShape {
    pub fn new(n_features: usize, n_classes: usize) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::argument("n_features must be positive"));
        }
        if n_classes < 2 {
            return Err(Error::argument("n_classes must be at least 2"));
        }
        Ok(ModelShape { n_features, n_classes })
    }

    pub fn param_dim(&self) -> usize {
        self.n_classes * (self.n_features + 1)
    }

    fn row(&self) -> usize {
        self.n_features + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 10,
            learning_rate: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be finite and nonnegative"));
        }
        Ok(())
    }
}

fn check_params(params: &ParamVector, shape: &ModelShape) -> Result<()> {
    Error::check_dim(shape.param_dim(), params.dim())
}

/// Writes the affine class scores for `features` into `scores`.
fn scores_into(params: &[f64], shape: &ModelShape, features: &[f64], scores: &mut [f64]) {
    let row = shape.row();
    for (c, s) in scores.iter_mut().enumerate() {
        let w = &params[c * row..(c + 1) * row];
        let dot: f64 = w[..shape.n_features].iter().zip(features).map(|(a, b)| a * b).sum();
        *s = dot + w[shape.n_features];
    }
}

/// In-place numerically stable softmax.
fn softmax(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
}

pub fn predict(params: &ParamVector, shape: &ModelShape, features: &[f64]) -> Result<Vec<f64>> {
    check_params(params, shape)?;
    Error::check_dim(shape.n_features, features.len())?;
    let mut probs = vec![0.0; shape.n_classes];
    scores_into(params.as_slice(), shape, features, &mut probs);
    softmax(&mut probs);
    Ok(probs)
}

fn check_batch(shape: &ModelShape, batch: &[&Sample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::argument("empty batch"));
    }
    for s in batch {
        Error::check_dim(shape.n_features, s.features.len())?;
        if s.label >= shape.n_classes {
            return Err(Error::argument(format!(
                "label {} out of range for {} classes",
                s.label, shape.n_classes
            )));
        }
    }
    Ok(())
}

/// Mean cross-entropy gradient over `batch`, accumulated into `grad`
/// (which is overwritten). `probs` is scratch space of length n_classes.
fn gradient_into(params: &[f64], shape: &ModelShape, batch: &[&Sample], grad: &mut [f64], probs: &mut [f64]) {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let row = shape.row();
    for sample in batch {
        scores_into(params, shape, &sample.features, probs);
        softmax(probs);
        probs[sample.label] -= 1.0;
        for (c, &err) in probs.iter().enumerate() {
            let g = &mut grad[c * row..(c + 1) * row];
            for (gj, xj) in g[..shape.n_features].iter_mut().zip(&sample.features) {
                *gj += err * xj;
            }
            g[shape.n_features] += err;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
}

/// Gradient of the mean cross-entropy loss over `batch`.
pub fn gradient(params: &ParamVector, shape: &ModelShape, batch: &[Sample]) -> Result<ParamVector> {
    check_params(params, shape)?;
    let refs: Vec<&Sample> = batch.iter().collect();
    check_batch(shape, &refs)?;
    let mut grad = vec![0.0; shape.param_dim()];
    let mut probs = vec![0.0; shape.n_classes];
    gradient_into(params.as_slice(), shape, &refs, &mut grad, &mut probs);
    Ok(ParamVector::from_vec(grad))
}

/// Mean cross-entropy loss.
pub fn loss(params: &ParamVector, shape: &ModelShape, samples: &[Sample]) -> Result<f64> {
    check_params(params, shape)?;
    if samples.is_empty() {
        return Err(Error::argument("empty sample set"));
    }
    let mut probs = vec![0.0; shape.n_classes];
    let mut total = 0.0;
    for s in samples {
        Error::check_dim(shape.n_features, s.features.len())?;
        scores_into(params.as_slice(), shape, &s.features, &mut probs);
        softmax(&mut probs);
        total -= probs[s.label].max(f64::MIN_POSITIVE).ln();
    }
    Ok(total / samples.len() as f64)
}

/// Fraction of samples whose arg-max score matches the label. Ties go to the
/// lowest class index.
pub fn accuracy(params: &ParamVector, shape: &ModelShape, samples: &[Sample]) -> Result<f64> {
    check_params(params, shape)?;
    if samples.is_empty() {
        return Err(Error::argument("empty sample set"));
    }
    let mut scores = vec![0.0; shape.n_classes];
    let mut correct = 0usize;
    for s in samples {
        Error::check_dim(shape.n_features, s.features.len())?;
        scores_into(params.as_slice(), shape, &s.features, &mut scores);
        let mut best = 0;
        for c in 1..scores.len() {
            if scores[c] > scores[best] {
                best = c;
            }
        }
        if best == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Runs plain minibatch SGD from `global` on `shard` and returns the
/// parameter delta (trained minus starting parameters).
///
/// Each epoch reshuffles with a Fisher-Yates pass whose stream is derived
/// from `(cfg.seed, epoch)`, so the result is bit-identical across runs.
pub fn local_train(
    global: &ParamVector,
    shape: &ModelShape,
    shard: &[Sample],
    cfg: &TrainConfig,
) -> Result<ParamVector> {
    check_params(global, shape)?;
    if shard.is_empty() {
        return Err(Error::argument("empty shard"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::argument("epochs and batch_size must be positive"));
    }
    let all: Vec<&Sample> = shard.iter().collect();
    check_batch(shape, &all)?;

    let mut params = global.as_slice().to_vec();
    let mut grad = vec![0.0; params.len()];
    let mut probs = vec![0.0; shape.n_classes];
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut batch: Vec<&Sample> = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        let mut rng = seed::stream(cfg.seed, seed::GLOBAL, epoch as u64, Purpose::Shuffle);
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&k| &shard[k]));
            gradient_into(&params, shape, &batch, &mut grad, &mut probs);
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
        }
    }

    let delta = params.iter().zip(global.as_slice()).map(|(t, g)| t - g).collect();
    Ok(ParamVector::from_vec(delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;

    fn sample(features: Vec<f64>, label: usize) -> Sample {
        Sample { features, label }
    }

    /// Independent finite-difference oracle over `loss`.
    fn fd_gradient(params: &ParamVector, shape: &ModelShape, batch: &[Sample], h: f64) -> Vec<f64> {
        (0..params.dim())
            .map(|k| {
                let mut plus = params.clone();
                let mut minus = params.clone();
                plus.as_mut_slice()[k] += h;
                minus.as_mut_slice()[k] -= h;
                (loss(&plus, shape, batch).unwrap() - loss(&minus, shape, batch).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn zero_params_give_uniform_probabilities() {
        let shape = ModelShape::new(3, 2).unwrap();
        let p = predict(&ParamVector::zeros(shape.param_dim()), &shape, &[1.0, -2.0, 0.3]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);

        let shape = ModelShape::new(3, 10).unwrap();
        let p = predict(&ParamVector::zeros(shape.param_dim()), &shape, &[0.1, 0.2, 0.3]).unwrap();
        for v in p {
            assert!((v - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn large_score_gap_saturates() {
        // bias of class 0 = 100, everything else zero: p0 = 1 / (1 + e^-100).
        let shape = ModelShape::new(2, 2).unwrap();
        let mut params = ParamVector::zeros(shape.param_dim());
        params.as_mut_slice()[2] = 100.0;
        let p = predict(&params, &shape, &[0.4, -0.7]).unwrap();
        assert!(p[0] >= 1.0 - 1e-9);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn predict_rejects_bad_dims() {
        let shape = ModelShape::new(2, 2).unwrap();
        let params = ParamVector::zeros(shape.param_dim());
        assert!(matches!(predict(&params, &shape, &[1.0]), Err(Error::Shape { .. })));
        assert!(matches!(
            predict(&ParamVector::zeros(5), &shape, &[1.0, 2.0]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn zero_params_single_sample_bias_gradient() {
        // p = (0.5, 0.5), y = e_1  =>  p - y = (0.5, -0.5).
        let shape = ModelShape::new(2, 2).unwrap();
        let g = gradient(&ParamVector::zeros(6), &shape, &[sample(vec![2.0, -1.0], 1)]).unwrap();
        assert_eq!(g.as_slice(), &[1.0, -0.5, 0.5, -1.0, 0.5, -0.5]);
    }

    #[test]
    fn gradient_is_invariant_to_batch_duplication() {
        let shape = ModelShape::new(3, 3).unwrap();
        let params = ParamVector::from_vec((0..12).map(|i| (i as f64 * 0.37).sin()).collect());
        let batch = vec![
            sample(vec![0.1, 0.5, -0.3], 0),
            sample(vec![-1.0, 0.2, 0.9], 2),
            sample(vec![0.4, 0.4, 0.4], 1),
        ];
        let doubled: Vec<Sample> = batch.iter().chain(batch.iter()).cloned().collect();
        let a = gradient(&params, &shape, &batch).unwrap();
        let b = gradient(&params, &shape, &doubled).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let shape = ModelShape::new(3, 3).unwrap();
        let params = ParamVector::from_vec((0..12).map(|i| (i as f64 * 1.3).cos()).collect());
        let batch = vec![sample(vec![0.3, -0.2, 0.8], 1), sample(vec![-0.5, 0.9, 0.1], 2)];
        let g = gradient(&params, &shape, &batch).unwrap();
        let fd = fd_gradient(&params, &shape, &batch, 1e-5);
        for (a, b) in g.as_slice().iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-4 * b.abs().max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let shape = ModelShape::new(2, 2).unwrap();
        assert!(matches!(
            gradient(&ParamVector::zeros(6), &shape, &[]),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn zero_learning_rate_gives_zero_delta() {
        let data = gen_synthetic(40, 4, 2, 2.0, 3).unwrap();
        let shape = ModelShape::new(4, 2).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let d = local_train(&ParamVector::zeros(10), &shape, &data.samples, &cfg).unwrap();
        assert!(d.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_full_batch_step_is_negative_scaled_gradient() {
        let data = gen_synthetic(12, 3, 3, 1.5, 9).unwrap();
        let shape = ModelShape::new(3, 3).unwrap();
        let start = ParamVector::from_vec((0..12).map(|i| 0.05 * i as f64).collect());
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 12,
            learning_rate: 0.2,
            seed: 1,
        };
        let d = local_train(&start, &shape, &data.samples, &cfg).unwrap();
        let g = gradient(&start, &shape, &data.samples).unwrap();
        for (a, b) in d.as_slice().iter().zip(g.as_slice()) {
            assert!((a + 0.2 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn default_configuration_runs_and_is_deterministic() {
        let data = gen_synthetic(95, 16, 4, 2.0, 5).unwrap();
        let shape = ModelShape::new(16, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 10,
            learning_rate: 0.01,
            seed: 42,
        };
        let a = local_train(&ParamVector::zeros(68), &shape, &data.samples, &cfg).unwrap();
        let b = local_train(&ParamVector::zeros(68), &shape, &data.samples, &cfg).unwrap();
        assert_eq!(a.dim(), 68);
        assert_eq!(a, b);
        assert!(a.norm() > 0.0);
    }

    #[test]
    fn empty_shard_is_rejected() {
        let shape = ModelShape::new(2, 2).unwrap();
        let r = local_train(&ParamVector::zeros(6), &shape, &[], &TrainConfig::default());
        assert!(matches!(r, Err(Error::Argument(_))));
    }
}
