use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Activation, Graph};
use crate::data::BatchStream;
use crate::error::{Error, Result};
use crate::nn::{Head, Init, LatentSampler, Mode, NetKind, Network, NetworkBuilder};
use crate::tensor::{Real, Tensor};

use super::optim::{OptimKind, Optimizer};
use super::TrainReport;

#[derive(Clone, Debug, PartialEq)]
pub struct GanConfig {
    pub batch_size: usize,
    pub latent_dim: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    /// Optimizer family; its learning rate is replaced by `lr_g`/`lr_d`.
    pub optimizer: OptimKind,
    pub steps: usize,
    pub seed: u64,
    /// Minimize `log(1 − D(G(z)))` instead of `−log D(G(z))`.
    pub saturating: bool,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            batch_size: 16,
            latent_dim: 100,
            lr_g: 2e-4,
            lr_d: 2e-4,
            optimizer: OptimKind::adam_gan(2e-4),
            steps: 1000,
            seed: 0,
            saturating: false,
        }
    }
}

impl GanConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2 for batchnorm".into()));
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GanState {
    pub opt_g: Optimizer,
    pub opt_d: Optimizer,
}

fn with_lr(kind: OptimKind, lr: f64) -> Result<Optimizer> {
    let mut o = Optimizer::new(kind)?;
    o.set_lr(lr)?;
    Ok(o)
}

impl GanState {
    pub fn new(cfg: &GanConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(GanState {
            opt_g: with_lr(cfg.optimizer, cfg.lr_g)?,
            opt_d: with_lr(cfg.optimizer, cfg.lr_d)?,
        })
    }
}

fn check_real<T: Real>(real: &Tensor<T>) -> Result<usize> {
    if real.ndim() != 4 || real.shape()[0] < 2 {
        return Err(Error::dim("gan_step", format!("real batch must be N×C×H×W with N ≥ 2, got {:?}", real.shape())));
    }
    if real.max_abs().to_f64() > 1.0 + 1e-6 {
        return Err(Error::Contract("real batch must lie in [-1, 1]".into()));
    }
    Ok(real.shape()[0])
}

fn finite(op: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numeric(op, format!("loss became {v}; training aborted")))
    }
}

/// One discriminator update followed by one generator update on the
/// standard adversarial objective. Returns `(d_loss, g_loss)`.
pub fn gan_step<T: Real>(
    gen: &mut Network<T>,
    disc: &mut Network<T>,
    real: &Tensor<T>,
    sampler: &mut LatentSampler,
    cfg: &GanConfig,
    state: &mut GanState,
) -> Result<(f64, f64)> {
    let n = check_real(real)?;

    // Discriminator: minimize bce(D(x), 1) + bce(D(G(z)), 0) with G frozen.
    let mut g = Graph::new();
    let z = g.constant(sampler.sample(n));
    let fake = gen.forward_on(&mut g, z, Mode::Train, false, &[])?.output;
    let x = g.constant(real.clone());
    let fr = disc.forward_on(&mut g, x, Mode::Train, true, &[])?;
    let ff = disc.forward_on(&mut g, fake, Mode::Train, true, &[])?;
    let ones = Tensor::full(g.value(fr.output).shape(), T::one());
    let zeros = Tensor::zeros(g.value(ff.output).shape());
    let lr_ = g.bce(fr.output, &ones)?;
    let lf = g.bce(ff.output, &zeros)?;
    let d_loss = g.add(lr_, lf)?;
    let d_val = finite("gan_step", g.value(d_loss).data()[0].to_f64())?;
    g.backward(d_loss)?;
    disc.zero_grad();
    disc.accumulate_grads(&g, &fr);
    disc.accumulate_grads(&g, &ff);
    state.opt_d.step(disc)?;

    // Generator: D's parameters enter as constants, so D is left untouched.
    let mut g = Graph::new();
    let z = g.constant(sampler.sample(n));
    let fg = gen.forward_on(&mut g, z, Mode::Train, true, &[])?;
    let dparams = disc.place_params(&mut g, false);
    let (score, _, _) = disc.run_with(&mut g, fg.output, &dparams, Mode::Train, &[])?;
    let g_loss = if cfg.saturating {
        let zeros = Tensor::zeros(g.value(score).shape());
        let l = g.bce(score, &zeros)?;
        g.scale(l, -1.0)?
    } else {
        let ones = Tensor::full(g.value(score).shape(), T::one());
        g.bce(score, &ones)?
    };
    let g_val = finite("gan_step", g.value(g_loss).data()[0].to_f64())?;
    g.backward(g_loss)?;
    gen.zero_grad();
    gen.accumulate_grads(&g, &fg);
    state.opt_g.step(gen)?;
    Ok((d_val, g_val))
}

#[derive(Clone, Debug, PartialEq)]
pub struct WganConfig {
    pub clip_c: f64,
    pub n_critic: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for WganConfig {
    fn default() -> Self {
        WganConfig {
            clip_c: 0.01,
            n_critic: 5,
            lr: 5e-5,
            batch_size: 16,
            latent_dim: 100,
            steps: 2000,
            seed: 0,
        }
    }
}

impl WganConfig {
    fn validate(&self) -> Result<()> {
        if !(self.clip_c > 0.0) {
            return Err(Error::Config(format!("clip constant must be positive, got {}", self.clip_c)));
        }
        if self.n_critic == 0 {
            return Err(Error::Config("n_critic must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2 for batchnorm".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct WganState {
    pub opt_g: Optimizer,
    pub opt_c: Optimizer,
}

impl WganState {
    pub fn new(cfg: &WganConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(WganState {
            opt_g: Optimizer::new(OptimKind::rmsprop(cfg.lr))?,
            opt_c: Optimizer::new(OptimKind::rmsprop(cfg.lr))?,
        })
    }
}

/// `n_critic` clipped critic updates on `mean(C(G(z))) − mean(C(x))`, then
/// one generator update on `−mean(C(G(z)))`. Returns the last critic pass's
/// `mean(C(x)) − mean(C(G(z)))` and the generator loss.
pub fn wgan_step<T: Real>(
    gen: &mut Network<T>,
    critic: &mut Network<T>,
    next_real: &mut dyn FnMut() -> Result<Tensor<T>>,
    sampler: &mut LatentSampler,
    cfg: &WganConfig,
    state: &mut WganState,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    if let NetKind::Discriminator { head: Head::Sigmoid, .. } = critic.kind() {
        return Err(Error::Config("the critic must have a linear head".into()));
    }
    let mut estimate = 0.0;
    for _ in 0..cfg.n_critic {
        let real = next_real()?;
        let n = real.shape()[0];
        let mut g = Graph::new();
        let z = g.constant(sampler.sample(n));
        let fake = gen.forward_on(&mut g, z, Mode::Train, false, &[])?.output;
        let x = g.constant(real);
        let fr = critic.forward_on(&mut g, x, Mode::Train, true, &[])?;
        let ff = critic.forward_on(&mut g, fake, Mode::Train, true, &[])?;
        let mr = g.mean(fr.output)?;
        let mf = g.mean(ff.output)?;
        let loss = g.sub(mf, mr)?;
        estimate = -finite("wgan_step", g.value(loss).data()[0].to_f64())?;
        g.backward(loss)?;
        critic.zero_grad();
        critic.accumulate_grads(&g, &fr);
        critic.accumulate_grads(&g, &ff);
        state.opt_c.step(critic)?;
        critic.clip_params(cfg.clip_c);
    }

    let mut g = Graph::new();
    let z = g.constant(sampler.sample(cfg.batch_size));
    let fg = gen.forward_on(&mut g, z, Mode::Train, true, &[])?;
    let cparams = critic.place_params(&mut g, false);
    let (score, _, _) = critic.run_with(&mut g, fg.output, &cparams, Mode::Train, &[])?;
    let m = g.mean(score)?;
    let loss = g.scale(m, -1.0)?;
    let g_val = finite("wgan_step", g.value(loss).data()[0].to_f64())?;
    g.backward(loss)?;
    gen.zero_grad();
    gen.accumulate_grads(&g, &fg);
    state.opt_g.step(gen)?;
    Ok((estimate, g_val))
}

fn batch_of<T: Real>(images: &[Tensor<T>], idx: &[usize]) -> Result<Tensor<T>> {
    let refs: Vec<&Tensor<T>> = idx.iter().map(|&i| &images[i]).collect();
    Tensor::stack(&refs)
}

/// Standard adversarial training over `images` (each `C×H×W`).
pub fn train_gan<T: Real>(
    gen: &mut Network<T>,
    disc: &mut Network<T>,
    images: &[Tensor<T>],
    cfg: &GanConfig,
) -> Result<TrainReport> {
    let started = Instant::now();
    let mut state = GanState::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sampler = LatentSampler::new(cfg.latent_dim, cfg.seed.wrapping_add(1));
    let mut stream = BatchStream::new((0..images.len()).collect(), cfg.batch_size)?;
    let mut report = TrainReport::new("step", &["d_loss", "g_loss"]);
    for step in 0..cfg.steps {
        let real = batch_of(images, &stream.next(&mut rng))?;
        let (d, g) = gan_step(gen, disc, &real, &mut sampler, cfg, &mut state)?;
        report.push(vec![d, g])?;
        if step % 100 == 0 {
            log::info!("gan step {step}: d_loss {d:.4} g_loss {g:.4}");
        }
    }
    report.finish(started, format!("{}{}", gen.checksum(), disc.checksum()));
    Ok(report)
}

/// Wasserstein training with weight clipping. The report carries the
/// critic's largest absolute parameter after every step.
pub fn train_wgan<T: Real>(
    gen: &mut Network<T>,
    critic: &mut Network<T>,
    images: &[Tensor<T>],
    cfg: &WganConfig,
) -> Result<TrainReport> {
    let started = Instant::now();
    let mut state = WganState::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sampler = LatentSampler::new(cfg.latent_dim, cfg.seed.wrapping_add(1));
    let mut stream = BatchStream::new((0..images.len()).collect(), cfg.batch_size)?;
    let mut report = TrainReport::new("step", &["critic_estimate", "g_loss", "max_abs_critic"]);
    for step in 0..cfg.steps {
        let mut next = || batch_of(images, &stream.next(&mut rng));
        let (est, g) = wgan_step(gen, critic, &mut next, &mut sampler, cfg, &mut state)?;
        report.push(vec![est, g, critic.max_abs_trainable()])?;
        if step % 100 == 0 {
            log::info!("wgan step {step}: critic estimate {est:.5} g_loss {g:.5}");
        }
    }
    report.finish(started, format!("{}{}", gen.checksum(), critic.checksum()));
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyConfig {
    pub steps: usize,
    pub lr: f64,
    pub clip_c: f64,
    pub n_critic: usize,
    pub batch_size: usize,
    pub real_mean: f64,
    pub real_std: f64,
    pub gen_start: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            steps: 200,
            lr: 1e-2,
            clip_c: 0.01,
            n_critic: 5,
            batch_size: 64,
            real_mean: 1.0,
            real_std: 0.1,
            gen_start: -1.0,
            seed: 0,
        }
    }
}

/// Per-step trace of the one-dimensional Wasserstein toy problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyRun {
    /// Generator output mean before the first step.
    pub initial_mean: f64,
    /// Generator output mean after each step.
    pub gen_mean: Vec<f64>,
    pub critic_estimate: Vec<f64>,
    pub max_abs_critic: Vec<f64>,
}

const TOY_LATENT: usize = 4;

/// Trains small MLPs on scalar data drawn from `N(real_mean, real_std²)`,
/// with the generator initialised to emit roughly `gen_start`.
pub fn toy_wgan_1d(cfg: &ToyConfig) -> Result<ToyRun> {
    let mut gen: Network<f64> = NetworkBuilder::new(NetKind::Custom("toy_generator".into()), &[TOY_LATENT], Init::He, cfg.seed)
        .linear("hidden", 16)?
        .act(Activation::LeakyRelu(0.2))?
        .linear("out", 1)?
        .build()?;
    for p in gen.params_mut() {
        match p.name.as_str() {
            "out.weight" => p.value = p.value.map(|v| v * 0.01),
            "out.bias" => p.value = p.value.map(|_| cfg.gen_start),
            _ => {}
        }
    }
    let mut critic: Network<f64> = NetworkBuilder::new(NetKind::Custom("toy_critic".into()), &[1], Init::He, cfg.seed + 1)
        .linear("hidden1", 32)?
        .act(Activation::LeakyRelu(0.2))?
        .linear("hidden2", 32)?
        .act(Activation::LeakyRelu(0.2))?
        .linear("out", 1)?
        .build()?;
    critic.clip_params(cfg.clip_c);

    let wcfg = WganConfig {
        clip_c: cfg.clip_c,
        n_critic: cfg.n_critic,
        lr: cfg.lr,
        batch_size: cfg.batch_size,
        latent_dim: TOY_LATENT,
        steps: cfg.steps,
        seed: cfg.seed,
    };
    let mut state = WganState::new(&wcfg)?;
    let mut sampler = LatentSampler::new(TOY_LATENT, cfg.seed + 2);
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed + 3);
    let mut probe = LatentSampler::new(TOY_LATENT, cfg.seed + 4);
    let probe_z: Tensor<f64> = probe.sample(512);
    let mut run = ToyRun {
        initial_mean: gen.forward(&probe_z, &[])?.0.mean(),
        gen_mean: Vec::with_capacity(cfg.steps),
        critic_estimate: Vec::with_capacity(cfg.steps),
        max_abs_critic: Vec::with_capacity(cfg.steps),
    };
    for _ in 0..cfg.steps {
        let mut next = || {
            let noise: Tensor<f64> = Tensor::randn(&[cfg.batch_size, 1], cfg.real_std, &mut data_rng);
            Ok(noise.map(|v| v + cfg.real_mean))
        };
        let (est, _) = wgan_step(&mut gen, &mut critic, &mut next, &mut sampler, &wcfg, &mut state)?;
        let (y, _) = gen.forward(&probe_z, &[])?;
        run.gen_mean.push(y.mean());
        run.critic_estimate.push(est);
        run.max_abs_critic.push(critic.max_abs_trainable());
    }
    Ok(run)
}

/// Draws `n` images from a generator with a seeded latent stream, in eval
/// mode. Each result is `C×H×W`.
pub fn generate_images<T: Real>(gen: &Network<T>, n: usize, seed: u64) -> Result<Vec<Tensor<T>>> {
    let dim = match gen.input_shape() {
        [d] => *d,
        s => return Err(Error::Contract(format!("generator input must be a latent vector, got {s:?}"))),
    };
    let mut sampler = LatentSampler::new(dim, seed);
    let mut out = Vec::with_capacity(n);
    let mut left = n;
    while left > 0 {
        let take = left.min(32);
        let (x, _) = gen.forward(&sampler.sample(take), &[])?;
        out.extend((0..take).map(|i| {
            let s = x.sample(i);
            let shape = s.shape()[1..].to_vec();
            s.reshape(&shape).expect("sample reshape")
        }));
        left -= take;
    }
    Ok(out)
}
