use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{softmax_rows, Graph};
use crate::data::{LabeledImages, Split};
use crate::error::{Error, Result};
use crate::nn::{Mode, Network};
use crate::tensor::{Real, Tensor};

use super::augment::{affine_augment, AugmentRanges};
use super::optim::{OptimKind, Optimizer};
use super::TrainReport;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate for the first half of the epochs.
    pub lr_high: f64,
    /// Learning rate for the second half.
    pub lr_low: f64,
    pub augment_prob: f64,
    pub augment: AugmentRanges,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 40,
            batch_size: 16,
            lr_high: 1e-4,
            lr_low: 1e-5,
            augment_prob: 0.7,
            augment: AugmentRanges::default(),
            seed: 0,
        }
    }
}

/// Two-phase schedule: `high` while `epoch < epochs / 2`, then `low`.
pub fn lr_at(epoch: usize, epochs: usize, high: f64, low: f64) -> f64 {
    if 2 * epoch < epochs {
        high
    } else {
        low
    }
}

/// Softmax class probabilities, one row per image, evaluated in chunks.
pub fn class_probabilities<T: Real>(net: &Network<T>, images: &Tensor<T>) -> Result<Vec<Vec<f64>>> {
    let logits = net.predict(images, 32)?;
    let k = logits.shape()[1];
    let p = softmax_rows(logits.data(), k);
    Ok(p.chunks(k).map(|r| r.iter().map(|v| v.to_f64()).collect()).collect())
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy over the selected items.
pub fn accuracy<T: Real>(net: &Network<T>, data: &LabeledImages<T>, idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::Config("accuracy over an empty selection".into()));
    }
    let probs = class_probabilities(net, &data.batch(idx)?)?;
    let hits = probs.iter().zip(idx).filter(|(p, &i)| argmax(p) == data.labels[i]).count();
    Ok(hits as f64 / idx.len() as f64)
}

/// Softmax cross-entropy training with Adam, per-sample augmentation and the
/// two-phase learning-rate schedule. Leaves `net` at the parameters of the
/// epoch with the best validation accuracy (earliest on ties).
pub fn train_classifier<T: Real>(
    net: &mut Network<T>,
    data: &LabeledImages<T>,
    cfg: &ClassifierConfig,
) -> Result<TrainReport> {
    let started = Instant::now();
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    let train = data.indices(Split::Train);
    let val = data.indices(Split::Val);
    if train.len() < 2 || val.is_empty() {
        return Err(Error::Config(format!(
            "classifier training needs at least 2 train and 1 val items, have {} and {}",
            train.len(),
            val.len()
        )));
    }
    let mut opt = Optimizer::new(OptimKind::adam(cfg.lr_high))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = train.clone();
    let mut report = TrainReport::new("epoch", &["lr", "train_loss", "val_accuracy"]);
    let mut best: Option<(f64, usize, Network<T>)> = None;

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg.epochs, cfg.lr_high, cfg.lr_low);
        opt.set_lr(lr)?;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        // A trailing singleton batch is dropped: batchnorm needs two samples.
        for chunk in order.chunks(cfg.batch_size.max(2)).filter(|c| c.len() >= 2) {
            let imgs = chunk
                .iter()
                .map(|&i| affine_augment(&data.images[i], cfg.augment_prob, &cfg.augment, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&Tensor<T>> = imgs.iter().collect();
            let x = Tensor::stack(&refs)?;
            let mut g = Graph::new();
            let xv = g.constant(x);
            let fwd = net.forward_on(&mut g, xv, Mode::Train, true, &[])?;
            let loss = g.softmax_xent(fwd.output, &data.labels_of(chunk))?;
            let lv = g.value(loss).data()[0].to_f64();
            if !lv.is_finite() {
                return Err(Error::numeric("train_classifier", format!("loss became {lv} in epoch {epoch}")));
            }
            g.backward(loss)?;
            net.zero_grad();
            net.accumulate_grads(&g, &fwd);
            opt.step(net)?;
            loss_sum += lv;
            batches += 1;
        }
        let val_acc = accuracy(net, data, &val)?;
        report.push(vec![lr, loss_sum / batches.max(1) as f64, val_acc])?;
        log::info!("classifier epoch {epoch}: loss {:.4} val acc {val_acc:.3}", loss_sum / batches.max(1) as f64);
        if best.as_ref().map_or(true, |(a, _, _)| val_acc > *a) {
            best = Some((val_acc, epoch, net.clone()));
        }
    }
    if let Some((acc, epoch, snapshot)) = best {
        net.load_values_from(&snapshot)?;
        report.best_epoch = Some(epoch);
        report.best_val_accuracy = Some(acc);
    }
    report.finish(started, net.checksum());
    Ok(report)
}
