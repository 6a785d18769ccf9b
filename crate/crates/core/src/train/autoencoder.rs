use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::data::BatchStream;
use crate::error::{Error, Result};
use crate::nn::{Mode, NetKind, Network};
use crate::tensor::{Real, Tensor};

use super::optim::{OptimKind, Optimizer};
use super::TrainReport;

#[derive(Clone, Debug, PartialEq)]
pub struct AutoencoderConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            steps: 2000,
            lr: 1e-3,
            batch_size: 8,
            seed: 0,
        }
    }
}

/// PSNR in dB for images in `[-1, 1]` (peak-to-peak 2).
pub fn psnr(mse: f64) -> f64 {
    10.0 * (4.0 / mse.max(1e-20)).log10()
}

/// Mean PSNR of `decode(encode(x))` over `images`, computed from the pooled
/// squared error.
pub fn reconstruction_psnr<T: Real>(enc: &Network<T>, dec: &Network<T>, images: &[Tensor<T>]) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Config("no images to evaluate".into()));
    }
    let mut se = 0.0;
    let mut count = 0usize;
    for chunk in images.chunks(16) {
        let refs: Vec<&Tensor<T>> = chunk.iter().collect();
        let x = Tensor::stack(&refs)?;
        let (f, _) = enc.forward(&x, &[])?;
        let (y, _) = dec.forward(&f, &[])?;
        se += x.data().iter().zip(y.data()).map(|(a, b)| (a.to_f64() - b.to_f64()).powi(2)).sum::<f64>();
        count += x.numel();
    }
    Ok(psnr(se / count as f64))
}

/// Trains a matched encoder/decoder pair on mean squared reconstruction
/// error with Adam.
pub fn train_autoencoder<T: Real>(
    enc: &mut Network<T>,
    dec: &mut Network<T>,
    train: &[Tensor<T>],
    heldout: &[Tensor<T>],
    cfg: &AutoencoderConfig,
) -> Result<TrainReport> {
    let started = Instant::now();
    match (enc.kind(), dec.kind()) {
        (NetKind::Encoder { level: a, channels: ca }, NetKind::Decoder { level: b, channels: cb })
            if a == b && ca == cb => {}
        (e, d) => return Err(Error::Config(format!("mismatched autoencoder pair `{e}` / `{d}`"))),
    }
    let mut opt_e = Optimizer::new(OptimKind::adam(cfg.lr))?;
    let mut opt_d = Optimizer::new(OptimKind::adam(cfg.lr))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stream = BatchStream::new((0..train.len()).collect(), cfg.batch_size.min(train.len()))?;
    let mut report = TrainReport::new("step", &["loss"]);
    for step in 0..cfg.steps {
        let idx = stream.next(&mut rng);
        let refs: Vec<&Tensor<T>> = idx.iter().map(|&i| &train[i]).collect();
        let mut g = Graph::new();
        let x = g.constant(Tensor::stack(&refs)?);
        let fe = enc.forward_on(&mut g, x, Mode::Train, true, &[])?;
        let fd = dec.forward_on(&mut g, fe.output, Mode::Train, true, &[])?;
        let loss = g.l2(fd.output, x)?;
        let lv = g.value(loss).data()[0].to_f64();
        report.push(vec![lv])?;
        g.backward(loss)?;
        enc.zero_grad();
        dec.zero_grad();
        enc.accumulate_grads(&g, &fe);
        dec.accumulate_grads(&g, &fd);
        opt_e.step(enc)?;
        opt_d.step(dec)?;
        if step % 200 == 0 {
            log::info!("autoencoder step {step}: loss {lv:.5}");
        }
    }
    if !heldout.is_empty() {
        report.heldout_psnr = Some(reconstruction_psnr(enc, dec, heldout)?);
    }
    report.finish(started, format!("{}{}", enc.checksum(), dec.checksum()));
    Ok(report)
}
