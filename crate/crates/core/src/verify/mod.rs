//! Verification of generated images against a trained classifier: class
//! activation maps, average-probability tables, relation reports and the
//! sample-size sweep.


use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::Provenance;
use crate::nn::Network;
use crate::tensor::{Real, Tensor};
use crate::train::{class_probabilities, generate_images};

/// Class activation map normalized to `[0, 1]` at image resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct CamMap {
    /// Row-major `height × width`.
    pub values: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub class_idx: usize,
    pub source: String,
}

impl CamMap {
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// First maximum in row-major order.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    /// `1×H×W` gray image in `[-1, 1]`.
    pub fn to_image(&self) -> Tensor<f32> {
        Tensor::from_fn(&[1, self.height, self.width], |i| (2.0 * self.values[i] - 1.0) as f32)
    }

    /// Red overlay on a `C×H×W` image (gray images are replicated): each
    /// pixel moves towards pure red by half its CAM value.
    pub fn overlay<T: Real>(&self, image: &Tensor<T>) -> Result<Tensor<f32>> {
        let [c, h, w] = image.shape()[..] else {
            return Err(Error::dim("cam_overlay", format!("expects C×H×W, got {:?}", image.shape())));
        };
        if (h, w) != (self.height, self.width) || (c != 1 && c != 3) {
            return Err(Error::dim(
                "cam_overlay",
                format!("image {c}x{h}x{w} does not match map {}x{}", self.height, self.width),
            ));
        }
        let hw = h * w;
        Ok(Tensor::from_fn(&[3, h, w], |i| {
            let (ch, p) = (i / hw, i % hw);
            let v = image.data()[if c == 1 { p } else { ch * hw + p }].to_f64();
            let a = 0.5 * self.values[p];
            let target = if ch == 0 { 1.0 } else { -1.0 };
            ((1.0 - a) * v + a * target) as f32
        }))
    }
}

/// `Σ_k weights[k]·features[k]` over `K×h×w` features, min-max normalized and
/// nearest-upsampled to `out_h × out_w`. A constant raw map gives all zeros.
pub fn cam_from_features(
    features: &[f64],
    (k, h, w): (usize, usize, usize),
    weights: &[f64],
    (out_h, out_w): (usize, usize),
) -> Result<Vec<f64>> {
    if features.len() != k * h * w || weights.len() != k || h == 0 || w == 0 {
        return Err(Error::dim(
            "compute_cam",
            format!("{} features for {k}x{h}x{w} with {} weights", features.len(), weights.len()),
        ));
    }
    let mut raw = vec![0.0; h * w];
    for (fk, &wk) in features.chunks(h * w).zip(weights) {
        for (r, &f) in raw.iter_mut().zip(fk) {
            *r += wk * f;
        }
    }
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let spread = hi - lo;
    let norm: Vec<f64> = if spread > f64::EPSILON * hi.abs().max(lo.abs()).max(1e-300) {
        raw.iter().map(|&v| ((v - lo) / spread).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; h * w]
    };
    Ok((0..out_h * out_w)
        .map(|i| {
            let (y, x) = (i / out_w, i % out_w);
            norm[(y * h / out_h) * w + x * w / out_w]
        })
        .collect())
}

/// CAM of `class_idx` for one `C×H×W` image, from the `final_conv` tap and
/// the linear head that follows global average pooling.
pub fn compute_cam<T: Real>(net: &Network<T>, image: &Tensor<T>, class_idx: usize, source: &str) -> Result<CamMap> {
    let (w_idx, _) = net.cam_head()?;
    let weight = &net.params()[w_idx].value;
    let (classes, k) = (weight.shape()[0], weight.shape()[1]);
    if class_idx >= classes {
        return Err(Error::Label(format!("class index {class_idx} outside 0..{classes}")));
    }
    let [_, ih, iw] = image.shape()[..] else {
        return Err(Error::dim("compute_cam", format!("expects C×H×W, got {:?}", image.shape())));
    };
    let mut shape = vec![1];
    shape.extend_from_slice(image.shape());
    let (_, taps) = net.forward(&image.clone().reshape(&shape)?, &["final_conv"])?;
    let f = &taps["final_conv"];
    let (_, fk, h, w) = f.dims4("compute_cam")?;
    debug_assert_eq!(fk, k);
    let feats: Vec<f64> = f.data().iter().map(|v| v.to_f64()).collect();
    let wrow: Vec<f64> = weight.data()[class_idx * k..(class_idx + 1) * k].iter().map(|v| v.to_f64()).collect();
    Ok(CamMap {
        values: cam_from_features(&feats, (k, h, w), &wrow, (ih, iw))?,
        height: ih,
        width: iw,
        class_idx,
        source: source.to_string(),
    })
}

fn stack_images<T: Real>(images: &[Tensor<T>]) -> Result<Tensor<T>> {
    let refs: Vec<&Tensor<T>> = images.iter().collect();
    Tensor::stack(&refs)
}

/// Per-image softmax rows for a set of `C×H×W` images.
pub fn image_probabilities<T: Real>(net: &Network<T>, images: &[Tensor<T>]) -> Result<Vec<Vec<f64>>> {
    if images.is_empty() {
        return Err(Error::Config("no images to classify".into()));
    }
    class_probabilities(net, &stack_images(images)?)
}

/// One cell of the verification table.
#[derive(Clone, Debug, PartialEq)]
pub struct VerificationRow {
    pub source: Provenance,
    /// e.g. `drusen-CFP`.
    pub group: String,
    pub true_class: String,
    pub count: usize,
    /// Mean softmax probability of the true class.
    pub value: f64,
    pub top1_accuracy: f64,
    /// Top-1 prediction counts per class.
    pub top1_hist: Vec<usize>,
    /// Mean probability per class.
    pub mean_probs: Vec<f64>,
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

/// Summarizes precomputed probability rows against `true_idx`.
pub fn summarize(probs: &[Vec<f64>], true_idx: usize) -> Result<(f64, f64, Vec<usize>, Vec<f64>)> {
    let k = probs.first().map_or(0, |r| r.len());
    if probs.is_empty() || true_idx >= k {
        return Err(Error::Config("no probabilities to summarize".into()));
    }
    let n = probs.len() as f64;
    let mut hist = vec![0; k];
    let mut mean = vec![0.0; k];
    for row in probs {
        hist[argmax(row)] += 1;
        for (m, &p) in mean.iter_mut().zip(row) {
            *m += p;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    Ok((mean[true_idx], hist[true_idx] as f64 / n, hist, mean))
}

pub fn verify_images<T: Real>(
    net: &Network<T>,
    images: &[Tensor<T>],
    classes: &[String],
    true_class: &str,
    source: Provenance,
    group: &str,
) -> Result<VerificationRow> {
    let true_idx = classes
        .iter()
        .position(|c| c == true_class)
        .ok_or_else(|| Error::Label(format!("class `{true_class}` unknown to the classifier ({})", classes.join(", "))))?;
    let probs = image_probabilities(net, images)?;
    if probs[0].len() != classes.len() {
        return Err(Error::Label(format!(
            "classifier has {} outputs but {} class names",
            probs[0].len(),
            classes.len()
        )));
    }
    let (value, top1_accuracy, top1_hist, mean_probs) = summarize(&probs, true_idx)?;
    Ok(VerificationRow {
        source,
        group: group.to_string(),
        true_class: true_class.to_string(),
        count: images.len(),
        value,
        top1_accuracy,
        top1_hist,
        mean_probs,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerificationTable {
    pub rows: Vec<VerificationRow>,
}

impl VerificationTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("source,class_group,true_class,count,mean_true_prob,top1_accuracy\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{:.6}",
                r.source, r.group, r.true_class, r.count, r.value, r.top1_accuracy
            );
        }
        s
    }
}

/// Classes by descending mean probability, ties by ascending index,
/// truncated to `top_n`.
pub fn rank_classes(mean_probs: &[f64], classes: &[String], top_n: usize) -> Vec<(String, f64)> {
    let mut order: Vec<usize> = (0..mean_probs.len()).collect();
    order.sort_by(|&a, &b| mean_probs[b].total_cmp(&mean_probs[a]).then(a.cmp(&b)));
    order.into_iter().take(top_n).map(|i| (classes[i].clone(), mean_probs[i])).collect()
}

pub fn relation_report<T: Real>(
    net: &Network<T>,
    images: &[Tensor<T>],
    classes: &[String],
    top_n: usize,
) -> Result<Vec<(String, f64)>> {
    let probs = image_probabilities(net, images)?;
    if probs[0].len() != classes.len() {
        return Err(Error::Label(format!(
            "classifier has {} outputs but {} class names",
            probs[0].len(),
            classes.len()
        )));
    }
    let (_, _, _, mean) = summarize(&probs, 0)?;
    Ok(rank_classes(&mean, classes, top_n))
}

pub fn relation_csv(report: &[(String, f64)]) -> String {
    let mut s = String::from("rank,class,mean_probability\n");
    for (i, (c, p)) in report.iter().enumerate() {
        let _ = writeln!(s, "{},{c},{p:.6}", i + 1);
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub size: usize,
    /// Mean probability of the true class over the generated samples.
    pub value: f64,
    pub top1_accuracy: f64,
    /// Summed mean probability of the three most likely other classes.
    pub top3_other_mass: f64,
}

/// For each size, trains a fresh generator on a seeded subset of `corpus`
/// (nested: smaller subsets are prefixes of larger ones), draws `n_samples`
/// images and verifies them. Trainings run sequentially.
#[allow(clippy::too_many_arguments)]
pub fn sample_size_sweep<T: Real>(
    sizes: &[usize],
    corpus: &[Tensor<T>],
    train_gan: &mut dyn FnMut(&[Tensor<T>], u64) -> Result<Network<T>>,
    classifier: &Network<T>,
    classes: &[String],
    true_class: &str,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if sizes.is_empty() || sizes.windows(2).any(|p| p[0] >= p[1]) || sizes[0] == 0 {
        return Err(Error::Config(format!("sweep sizes {sizes:?} must be positive and strictly ascending")));
    }
    if let Some(&s) = sizes.iter().find(|&&s| s > corpus.len()) {
        return Err(Error::Config(format!("sweep size {s} exceeds corpus of {}", corpus.len())));
    }
    if n_samples == 0 {
        return Err(Error::Config("sweep needs at least one generated sample".into()));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut rows = Vec::new();
    for (i, &size) in sizes.iter().enumerate() {
        let subset: Vec<Tensor<T>> = order[..size].iter().map(|&j| corpus[j].clone()).collect();
        let run_seed = seed.wrapping_add(1 + i as u64);
        let gen = train_gan(&subset, run_seed)?;
        let samples = generate_images(&gen, n_samples, run_seed ^ 0x5eed)?;
        let row = verify_images(classifier, &samples, classes, true_class, Provenance::Wgan, true_class)?;
        let true_idx = classes.iter().position(|c| c == true_class).expect("verified above");
        let others: Vec<f64> = row
            .mean_probs
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != true_idx)
            .map(|(_, &p)| p)
            .collect();
        let mut sorted = others;
        sorted.sort_by(|a, b| b.total_cmp(a));
        rows.push(SweepRow {
            size,
            value: row.value,
            top1_accuracy: row.top1_accuracy,
            top3_other_mass: sorted.iter().take(3).sum(),
        });
        log::info!("sweep size {size}: value {:.4}", row.value);
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("size,value,top1_accuracy,top3_other_mass\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.6},{:.6},{:.6}", r.size, r.value, r.top1_accuracy, r.top3_other_mass);
    }
    s
}
