use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::adam_step;
use super::config::{HeadConfig, ValMetric};
use super::model::{backward, init_head, predict, HeadModel};
use super::noise::add_noise_in_place;
use crate::embedstore::EmbeddingDataset;
use crate::metrics::{self, DEFAULT_THRESHOLD};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean focal loss over the (noised) training presentations of the epoch.
    pub train_loss: f64,
    pub val_metric: f64,
    /// Same metric on the clean training split; the train/val gap measures overfitting.
    pub train_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub metric: ValMetric,
    pub alpha: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_metric: f64,
    pub stopped_early: bool,
}

impl TrainingLog {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }
}

/// `alpha_c = N / (C * count_c)`; classes absent from training get weight 1.
pub fn inverse_frequency_alpha(labels: &[u32], num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        counts[l as usize] += 1;
    }
    let n = labels.len() as f64;
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                1.0
            } else {
                n / (num_classes as f64 * c as f64)
            }
        })
        .collect()
}

/// Scores a model on a store with the configured selection metric.
pub fn evaluate_metric(model: &HeadModel, ds: &EmbeddingDataset, metric: ValMetric) -> Result<f64> {
    let classes = model.num_classes();
    let (argmax, probs) = predict(model, ds)?;
    let pred: Vec<u32> = if classes == 2 {
        probs
            .chunks_exact(2)
            .map(|p| (p[1] >= DEFAULT_THRESHOLD) as u32)
            .collect()
    } else {
        argmax
    };
    let cm = metrics::confusion(ds.labels(), &pred, classes)?;
    let metric = match metric {
        ValMetric::Auto if classes == 2 => ValMetric::F1,
        ValMetric::Auto => ValMetric::BalancedAccuracy,
        m => m,
    };
    match metric {
        ValMetric::BalancedAccuracy => metrics::balanced_accuracy(&cm),
        ValMetric::F1 if classes == 2 => Ok(metrics::per_class(&cm)[1].f1),
        _ => metrics::weighted_f1(&cm),
    }
}

fn check_store(ds: &EmbeddingDataset, cfg: &HeadConfig, name: &str) -> Result<()> {
    if ds.dim() != cfg.input_dim {
        return Err(Error::DimensionMismatch {
            what: format!("{name} store dim vs head input_dim"),
            expected: cfg.input_dim,
            actual: ds.dim(),
        });
    }
    if ds.is_empty() {
        return Err(Error::Empty(format!("{name} store has no rows")));
    }
    if let Some(&l) = ds.labels().iter().find(|&&l| l as usize >= cfg.num_classes) {
        return Err(Error::Invariant(format!(
            "{name} label {l} out of range for {} classes",
            cfg.num_classes
        )));
    }
    Ok(())
}

/// Trains a head with shuffled minibatches, on-the-fly feature noise, focal loss and
/// ADAM. The best-validation snapshot is returned; training stops after `patience`
/// epochs without strict improvement. Validation data is never augmented.
pub fn train(train: &EmbeddingDataset, val: &EmbeddingDataset, cfg: &HeadConfig) -> Result<(HeadModel, TrainingLog)> {
    cfg.validate()?;
    check_store(train, cfg, "train")?;
    check_store(val, cfg, "validation")?;

    let alpha = match &cfg.alpha {
        Some(a) => a.clone(),
        None => inverse_frequency_alpha(train.labels(), cfg.num_classes),
    };
    let metric = cfg.metric();
    let mut model = init_head(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // separate stream from the initializer
    rng.set_stream(1);

    let dim = cfg.input_dim;
    let n = train.rows();
    let features: Vec<f64> = train.data().iter().map(|&v| v as f64).collect();
    let labels: Vec<usize> = train.labels().iter().map(|&l| l as usize).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut batch_x = Vec::with_capacity(cfg.batch_size * dim);
    let mut batch_y = Vec::with_capacity(cfg.batch_size);

    let mut records = Vec::new();
    let mut best: Option<(f64, usize, HeadModel)> = None;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                let start = batch_x.len();
                batch_x.extend_from_slice(&features[i * dim..(i + 1) * dim]);
                add_noise_in_place(&mut batch_x[start..], cfg.noise_sigma, &mut rng);
                batch_y.push(labels[i]);
            }
            let (grads, loss) = backward(&model, &batch_x, &batch_y, cfg.gamma, &alpha)?;
            loss_sum += loss * chunk.len() as f64;
            adam_step(&mut model, &grads, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)?;
        }
        if model.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::Invariant(format!("non-finite parameters after epoch {epoch}")));
        }
        let val_metric = evaluate_metric(&model, val, metric)?;
        let train_metric = evaluate_metric(&model, train, metric)?;
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            val_metric,
            train_metric,
        });
        log::debug!("epoch {epoch}: loss {:.6} val {val_metric:.4}", loss_sum / n as f64);
        match &best {
            Some((score, _, _)) if val_metric <= *score => {}
            _ => best = Some((val_metric, epoch, model.clone())),
        }
        let best_epoch = best.as_ref().map(|b| b.1).unwrap_or(epoch);
        if epoch - best_epoch >= cfg.patience {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    let (best_val_metric, best_epoch, best_model) = best.expect("at least one epoch runs");
    Ok((
        best_model,
        TrainingLog {
            metric,
            alpha,
            epochs: records,
            best_epoch,
            best_val_metric,
            stopped_early,
        },
    ))
}
