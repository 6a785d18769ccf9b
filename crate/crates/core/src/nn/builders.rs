use crate::autodiff::{Activation, Pool};
use crate::error::{Error, Result};
use crate::tensor::Real;

use super::kind::{Head, NetKind};
use super::network::{Init, Network, NetworkBuilder};

/// Encoder channel width at each level.
pub const ENCODER_WIDTHS: [usize; 4] = [16, 32, 64, 128];
pub const MAX_LEVEL: usize = 4;

const LEAK: f64 = 0.2;

fn check_channels(c: usize) -> Result<()> {
    if c == 1 || c == 3 {
        Ok(())
    } else {
        Err(Error::Config(format!("image channels must be 1 or 3, got {c}")))
    }
}

fn check_base(base: usize) -> Result<()> {
    if base >= 8 {
        Ok(())
    } else {
        Err(Error::Config(format!("base channel count must be at least 8, got {base}")))
    }
}

/// Number of stride-2 stages between 4×4 and `size`.
fn doublings(size: usize) -> usize {
    (size / 4).trailing_zeros() as usize
}

/// DCGAN generator: `z` → `(8·base)×4×4` → stride-2 transposed conv blocks →
/// `tanh` image. Sizes 32 and 64 only.
pub fn build_dcgan_generator<T: Real>(
    latent_dim: usize,
    img_size: usize,
    img_channels: usize,
    base: usize,
    seed: u64,
) -> Result<Network<T>> {
    if img_size != 32 && img_size != 64 {
        return Err(Error::Config(format!(
            "generator image size must be 32 or 64 (64 is the largest supported), got {img_size}"
        )));
    }
    check_channels(img_channels)?;
    check_base(base)?;
    if latent_dim == 0 {
        return Err(Error::Config("latent dimension must be positive".into()));
    }
    let kind = NetKind::Generator {
        latent_dim,
        img_size,
        channels: img_channels,
        base,
    };
    let mut ch = 8 * base;
    let mut b = NetworkBuilder::new(kind, &[latent_dim], Init::Dcgan, seed)
        .linear("proj", ch * 16)?
        .reshape(&[ch, 4, 4])?
        .batchnorm("proj_bn")?
        .act(Activation::Relu)?;
    let blocks = doublings(img_size);
    for i in 0..blocks - 1 {
        b = b
            .conv_transpose(&format!("up{i}"), ch / 2, 4, 2, 1)?
            .batchnorm(&format!("up{i}_bn"))?
            .act(Activation::Relu)?;
        ch /= 2;
    }
    b.conv_transpose("out", img_channels, 4, 2, 1)?
        .act(Activation::Tanh)?
        .build()
}

/// DCGAN discriminator or WGAN critic: stride-2 conv blocks with
/// leaky ReLU, batchnorm on all but the first, then a 4×4 valid conv to one
/// score per sample. Sizes 8, 16, 32, 64.
pub fn build_discriminator<T: Real>(
    img_size: usize,
    img_channels: usize,
    base: usize,
    head: Head,
    seed: u64,
) -> Result<Network<T>> {
    if !matches!(img_size, 8 | 16 | 32 | 64) {
        return Err(Error::Config(format!(
            "discriminator image size must be 8, 16, 32 or 64, got {img_size}"
        )));
    }
    check_channels(img_channels)?;
    check_base(base)?;
    let kind = NetKind::Discriminator {
        img_size,
        channels: img_channels,
        base,
        head,
    };
    let mut b = NetworkBuilder::new(kind, &[img_channels, img_size, img_size], Init::Dcgan, seed);
    let mut ch = base;
    for i in 0..doublings(img_size) {
        b = b.conv(&format!("down{i}"), ch, 4, 2, 1)?;
        if i > 0 {
            b = b.batchnorm(&format!("down{i}_bn"))?;
        }
        b = b.act(Activation::LeakyRelu(LEAK))?;
        ch *= 2;
    }
    b = b.conv("score", 1, 4, 1, 0)?.flatten()?;
    if head == Head::Sigmoid {
        b = b.act(Activation::Sigmoid)?;
    }
    b.build()
}

fn check_level(level: usize) -> Result<()> {
    if (1..=MAX_LEVEL).contains(&level) {
        Ok(())
    } else {
        Err(Error::Config(format!("encoder level must be in 1..=4, got {level}")))
    }
}

/// Encoder to level `k`: 3×3 conv + ReLU per level with a 2× average pool
/// between levels. Tap `enc_level_j` follows level `j`.
pub fn build_encoder<T: Real>(level: usize, img_channels: usize, seed: u64) -> Result<Network<T>> {
    check_level(level)?;
    check_channels(img_channels)?;
    let nominal = 4 << (level - 1);
    let mut b = NetworkBuilder::new(
        NetKind::Encoder {
            level,
            channels: img_channels,
        },
        &[img_channels, nominal, nominal],
        Init::He,
        seed,
    )
    .flexible_spatial();
    for j in 1..=level {
        if j > 1 {
            b = b.pool(Pool::AvgPool2)?;
        }
        b = b
            .conv(&format!("enc{j}"), ENCODER_WIDTHS[j - 1], 3, 1, 1)?
            .act(Activation::Relu)?
            .tap(&format!("enc_level_{j}"))?;
    }
    b.build()
}

/// Decoder from level `k` features back to image space, mirroring
/// [`build_encoder`] with nearest upsampling + conv. The output is linear.
pub fn build_decoder<T: Real>(level: usize, img_channels: usize, seed: u64) -> Result<Network<T>> {
    check_level(level)?;
    check_channels(img_channels)?;
    let mut b = NetworkBuilder::new(
        NetKind::Decoder {
            level,
            channels: img_channels,
        },
        &[ENCODER_WIDTHS[level - 1], 4, 4],
        Init::He,
        seed,
    )
    .flexible_spatial();
    for j in (2..=level).rev() {
        b = b
            .conv(&format!("dec{j}"), ENCODER_WIDTHS[j - 2], 3, 1, 1)?
            .act(Activation::Relu)?
            .pool(Pool::NearestUpsample2)?;
    }
    b.conv("dec1", img_channels, 3, 1, 1)?.build()
}

/// CAM-compatible classifier: three conv/batchnorm/ReLU blocks (the first
/// two followed by 2×2 pooling), a final conv feature map (tap `final_conv`)
/// at a quarter of the input resolution, global average pooling and a single
/// linear layer. Stopping the pooling early keeps the CAM grid fine enough to
/// localize lesions.
pub fn build_classifier<T: Real>(
    num_classes: usize,
    img_size: usize,
    img_channels: usize,
    base: usize,
    seed: u64,
) -> Result<Network<T>> {
    if num_classes < 2 {
        return Err(Error::Config(format!("classifier needs at least 2 classes, got {num_classes}")));
    }
    if img_size < 8 || img_size % 4 != 0 {
        return Err(Error::Config(format!("classifier image size must be a multiple of 4 and at least 8, got {img_size}")));
    }
    check_channels(img_channels)?;
    if base == 0 {
        return Err(Error::Config("base channel count must be positive".into()));
    }
    let kind = NetKind::Classifier {
        classes: num_classes,
        img_size,
        channels: img_channels,
        base,
    };
    let mut b = NetworkBuilder::new(kind, &[img_channels, img_size, img_size], Init::He, seed);
    for (i, width) in [base, 2 * base, 4 * base].into_iter().enumerate() {
        b = b
            .conv(&format!("block{i}"), width, 3, 1, 1)?
            .batchnorm(&format!("block{i}_bn"))?
            .act(Activation::Relu)?;
        if i < 2 {
            b = b.pool(Pool::AvgPool2)?;
        }
    }
    b.conv("final", 4 * base, 3, 1, 1)?
        .batchnorm("final_bn")?
        .act(Activation::Relu)?
        .tap("final_conv")?
        .pool(Pool::GlobalAvg)?
        .linear("fc", num_classes)?
        .build()
}

/// Rebuilds the layer stack named by a tag with fresh parameters.
pub fn build_from_kind<T: Real>(kind: &NetKind, seed: u64) -> Result<Network<T>> {
    match *kind {
        NetKind::Generator {
            latent_dim,
            img_size,
            channels,
            base,
        } => build_dcgan_generator(latent_dim, img_size, channels, base, seed),
        NetKind::Discriminator {
            img_size,
            channels,
            base,
            head,
        } => build_discriminator(img_size, channels, base, head, seed),
        NetKind::Encoder { level, channels } => build_encoder(level, channels, seed),
        NetKind::Decoder { level, channels } => build_decoder(level, channels, seed),
        NetKind::Classifier {
            classes,
            img_size,
            channels,
            base,
        } => build_classifier(classes, img_size, channels, base, seed),
        NetKind::Custom(ref name) => Err(Error::Checkpoint(format!(
            "custom network `{name}` cannot be rebuilt from its tag"
        ))),
    }
}

impl<T: Real> Network<T> {
    /// Index of the `fc` weight and bias, after checking that the only
    /// mapping from the `final_conv` tap to the output is global average
    /// pooling followed by one linear layer.
    pub fn cam_head(&self) -> Result<(usize, usize)> {
        let tap = self
            .layers
            .iter()
            .position(|l| matches!(l, super::Layer::Tap(n) if n == "final_conv"))
            .ok_or_else(|| Error::Contract("CAM requires a `final_conv` tap".into()))?;
        match &self.layers[tap + 1..] {
            [super::Layer::Pool(Pool::GlobalAvg), super::Layer::Linear { w, b }] => Ok((*w, *b)),
            _ => Err(Error::Contract(
                "CAM requires global average pooling and a single linear layer after `final_conv`".into(),
            )),
        }
    }
}
