//! Local client training: plain mini-batch SGD, `theta <- theta - lr * grad`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::Sample;
use crate::loss::{assign_targets, loss, loss_grad, LossBreakdown, LossConfig, LossError};
use crate::model::{Detector, ModelError, ParamVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("parameter and gradient lengths differ: {params} vs {grad}")]
    LengthMismatch { params: usize, grad: usize },
    #[error("non-finite gradient at index {0}")]
    NonFiniteGradient(usize),
    #[error("non-finite loss in epoch {epoch} at sample {sample}")]
    NonFiniteLoss { epoch: usize, sample: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("sample {sample}: {source}")]
    Loss {
        sample: usize,
        #[source]
        source: LossError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub local_epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub shuffle_seed: u64,
}

fn default_batch() -> usize {
    8
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        if self.local_epochs == 0 {
            return Err(TrainError::InvalidConfig("local_epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    /// Mean per-sample loss, measured on the forward pass before each batch update.
    pub mean_loss: LossBreakdown,
    pub samples_processed: usize,
}

/// `params - lr * grad`.
pub fn sgd_step(params: &ParamVector, grad: &ParamVector, lr: f64) -> Result<ParamVector, TrainError> {
    let mut out = params.clone();
    sgd_step_in_place(&mut out, grad, lr)?;
    Ok(out)
}

pub fn sgd_step_in_place(params: &mut ParamVector, grad: &ParamVector, lr: f64) -> Result<(), TrainError> {
    if params.len() != grad.len() {
        return Err(TrainError::LengthMismatch { params: params.len(), grad: grad.len() });
    }
    if let Some(i) = grad.first_non_finite() {
        return Err(TrainError::NonFiniteGradient(i));
    }
    for (p, g) in params.0.iter_mut().zip(&grad.0) {
        *p -= lr * g;
    }
    Ok(())
}

/// Per-sample loss and gradient, accumulated into `acc`.
pub fn accumulate_sample_gradient(
    model: &Detector,
    params: &ParamVector,
    sample: &Sample,
    loss_cfg: &LossConfig,
    acc: &mut ParamVector,
) -> Result<LossBreakdown, TrainError> {
    let pass = model.forward_pass(params, &sample.image)?;
    let weights = loss_cfg.weights();
    let wrap = |source| TrainError::Loss { sample: 0, source };
    let assignment = assign_targets(&sample.objects, &pass.prediction, loss_cfg.confidence_target).map_err(wrap)?;
    let breakdown = loss(&pass.prediction, &assignment, &weights).map_err(wrap)?;
    let upstream = loss_grad(&pass.prediction, &assignment, &weights).map_err(wrap)?;
    model.backward_from(params, &sample.image, &pass, &upstream, acc)?;
    Ok(breakdown)
}

/// Mean loss of `params` over `data` without updating anything.
pub fn evaluate_loss(
    model: &Detector,
    params: &ParamVector,
    data: &[Sample],
    loss_cfg: &LossConfig,
) -> Result<LossBreakdown, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut sum = LossBreakdown::default();
    for (i, s) in data.iter().enumerate() {
        let pred = model.forward(params, &s.image)?;
        let a = assign_targets(&s.objects, &pred, loss_cfg.confidence_target)
            .map_err(|source| TrainError::Loss { sample: i, source })?;
        let l = loss(&pred, &a, &loss_cfg.weights()).map_err(|source| TrainError::Loss { sample: i, source })?;
        sum.accumulate(&l);
    }
    Ok(sum.scaled(1.0 / data.len() as f64))
}

/// Seed used to shuffle epoch `epoch`.
pub fn epoch_seed(shuffle_seed: u64, epoch: usize) -> u64 {
    shuffle_seed ^ epoch as u64
}

/// Run `local_epochs` epochs of mini-batch SGD over `data`.
///
/// Each epoch visits every sample once in an order shuffled with
/// [`epoch_seed`]; the last partial batch is kept, and each batch gradient is
/// the mean over the samples actually in it.
pub fn train_local(
    model: &Detector,
    params: &ParamVector,
    data: &[Sample],
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<(ParamVector, Vec<EpochTrace>), TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut theta = params.clone();
    let mut grad = ParamVector::zeros(theta.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut traces = Vec::with_capacity(cfg.local_epochs);
    for epoch in 0..cfg.local_epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(cfg.shuffle_seed, epoch)));
        let mut epoch_loss = LossBreakdown::default();
        let mut seen = 0;
        for batch in order.chunks(cfg.batch_size) {
            grad.0.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let l =
                    accumulate_sample_gradient(model, &theta, &data[i], loss_cfg, &mut grad).map_err(|e| match e {
                        TrainError::Loss { source, .. } => TrainError::Loss { sample: i, source },
                        other => other,
                    })?;
                if !l.is_finite() {
                    return Err(TrainError::NonFiniteLoss { epoch, sample: i });
                }
                epoch_loss.accumulate(&l);
                seen += 1;
            }
            let scale = 1.0 / batch.len() as f64;
            grad.0.iter_mut().for_each(|g| *g *= scale);
            sgd_step_in_place(&mut theta, &grad, cfg.learning_rate)?;
        }
        traces.push(EpochTrace { mean_loss: epoch_loss.scaled(1.0 / seen as f64), samples_processed: seen });
    }
    Ok((theta, traces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbox::BBox;
    use crate::dataio::{GrayImage, GroundTruthObject};
    use crate::model::ModelConfig;
    use rand::Rng;

    fn setup(n: usize, seed: u64) -> (Detector, ParamVector, Vec<Sample>) {
        let cfg = ModelConfig {
            input_height: 6,
            input_width: 6,
            grid_size: 2,
            boxes_per_cell: 2,
            num_classes: 3,
            hidden_width: 5,
            seed,
        };
        let model = Detector::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n)
            .map(|_| Sample {
                image: GrayImage::new(6, 6, (0..36).map(|_| rng.random()).collect()).unwrap(),
                objects: vec![GroundTruthObject {
                    class_id: rng.random_range(0..3),
                    bbox: BBox::new(rng.random_range(0.3..0.7), rng.random_range(0.3..0.7), 0.2, 0.3),
                }],
            })
            .collect();
        let p = model.init_params();
        (model, p, data)
    }

    fn cfg(lr: f64, epochs: usize, batch: usize) -> TrainConfig {
        TrainConfig { learning_rate: lr, local_epochs: epochs, batch_size: batch, shuffle_seed: 17 }
    }

    #[test]
    fn sgd_step_arithmetic() {
        let p = ParamVector(vec![1.0]);
        let out = sgd_step(&p, &ParamVector(vec![2.0]), 0.1).unwrap();
        assert!((out.0[0] - 0.8).abs() < 1e-15);
        assert_eq!(sgd_step(&p, &ParamVector(vec![0.0]), 0.1).unwrap(), p);
        assert!(matches!(sgd_step(&p, &ParamVector(vec![1.0, 2.0]), 0.1), Err(TrainError::LengthMismatch { .. })));
        assert_eq!(sgd_step(&p, &ParamVector(vec![f64::NAN]), 0.1), Err(TrainError::NonFiniteGradient(0)));
    }

    #[test]
    fn two_steps_compose_linearly() {
        let p = ParamVector(vec![0.3, -1.2]);
        let g1 = ParamVector(vec![0.5, 0.25]);
        let g2 = ParamVector(vec![-0.75, 2.0]);
        let two = sgd_step(&sgd_step(&p, &g1, 0.125).unwrap(), &g2, 0.125).unwrap();
        let once = sgd_step(&p, &(&g1 + &g2), 0.125).unwrap();
        for (a, b) in two.0.iter().zip(&once.0) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn accounting_and_zero_lr() {
        let (model, p, data) = setup(7, 1);
        let (out, traces) = train_local(&model, &p, &data, &cfg(0.0, 3, 3), &LossConfig::default()).unwrap();
        assert_eq!(out, p);
        assert_eq!(traces.len(), 3);
        assert_eq!(traces.iter().map(|t| t.samples_processed).sum::<usize>(), 21);
    }

    #[test]
    fn full_batch_equals_one_mean_gradient_step() {
        let (model, p, data) = setup(5, 2);
        let lc = LossConfig::default();
        let (out, _) = train_local(&model, &p, &data, &cfg(0.05, 1, 64), &lc).unwrap();
        let mut g = ParamVector::zeros(p.len());
        for s in &data {
            accumulate_sample_gradient(&model, &p, s, &lc, &mut g).unwrap();
        }
        let mean = &g * (1.0 / data.len() as f64);
        let want = sgd_step(&p, &mean, 0.05).unwrap();
        let max_diff = out.0.iter().zip(&want.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_diff < 1e-12, "{max_diff}");
    }

    #[test]
    fn deterministic() {
        let (model, p, data) = setup(9, 3);
        let c = cfg(0.1, 2, 4);
        let a = train_local(&model, &p, &data, &c, &LossConfig::default()).unwrap();
        let b = train_local(&model, &p, &data, &c, &LossConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_step_descends() {
        let lc = LossConfig::default();
        let mut violations = 0;
        for seed in 0..20 {
            let (model, p, data) = setup(6, 100 + seed);
            let before = evaluate_loss(&model, &p, &data, &lc).unwrap().total;
            let (q, _) = train_local(&model, &p, &data, &cfg(1e-3, 1, 64), &lc).unwrap();
            let after = evaluate_loss(&model, &q, &data, &lc).unwrap().total;
            if after > before {
                violations += 1;
            }
        }
        assert!(violations <= 1, "{violations} ascents");
    }

    #[test]
    fn errors() {
        let (model, p, data) = setup(2, 4);
        let lc = LossConfig::default();
        assert_eq!(train_local(&model, &p, &[], &cfg(0.1, 1, 1), &lc), Err(TrainError::EmptyDataset));
        assert!(train_local(&model, &p, &data, &cfg(0.1, 0, 1), &lc).is_err());
        assert!(train_local(&model, &p, &data, &cfg(0.1, 1, 0), &lc).is_err());
    }
}
