//! Multi-level closed-form stylization: encode content and style, apply the
//! whitening-coloring transform per level, decode.


use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::pnm;
use crate::linalg::Matrix;
use crate::nn::{build_decoder, build_encoder, NetKind, Network, MAX_LEVEL};
use crate::par;
use crate::tensor::{Real, Tensor};
use crate::train::{train_autoencoder, AutoencoderConfig, TrainReport};
use crate::wct::{feature_covariance, wct, FeatureMatrix, DEFAULT_EIG_FLOOR, DEFAULT_EPS_REG};

/// Encoder/decoder pairs for levels `1..=levels()`, plus the transform
/// parameters. Every pair is checked to round-trip shapes.
#[derive(Clone, Debug)]
pub struct StylizerStack<T> {
    encoders: Vec<Network<T>>,
    decoders: Vec<Network<T>>,
    channels: usize,
    pub alpha: f64,
    pub eps_reg: f64,
    pub eig_floor: f64,
}

fn level_of(kind: &NetKind) -> Option<(usize, usize)> {
    match kind {
        NetKind::Encoder { level, channels } | NetKind::Decoder { level, channels } => Some((*level, *channels)),
        _ => None,
    }
}

impl<T: Real> StylizerStack<T> {
    /// `encoders[k-1]` and `decoders[k-1]` must be the level-`k` pair.
    pub fn new(encoders: Vec<Network<T>>, decoders: Vec<Network<T>>, alpha: f64) -> Result<Self> {
        if encoders.is_empty() || encoders.len() != decoders.len() || encoders.len() > MAX_LEVEL {
            return Err(Error::Config(format!(
                "stylizer needs 1..={MAX_LEVEL} matched levels, got {} encoders and {} decoders",
                encoders.len(),
                decoders.len()
            )));
        }
        let channels = match level_of(encoders[0].kind()) {
            Some((_, c)) => c,
            None => return Err(Error::Config(format!("`{}` is not an encoder", encoders[0].kind()))),
        };
        for (k, (e, d)) in encoders.iter().zip(&decoders).enumerate() {
            let want = NetKind::Encoder { level: k + 1, channels };
            if e.kind() != &want {
                return Err(Error::Config(format!("encoder slot {} holds `{}`, expected `{want}`", k + 1, e.kind())));
            }
            let want = NetKind::Decoder { level: k + 1, channels };
            if d.kind() != &want {
                return Err(Error::Config(format!("decoder slot {} holds `{}`, expected `{want}`", k + 1, d.kind())));
            }
            let side = 1 << k;
            let probe = Tensor::zeros(&[1, channels, side, side]);
            let (f, _) = e.forward(&probe, &[])?;
            let (back, _) = d.forward(&f, &[])?;
            if back.shape() != probe.shape() {
                return Err(Error::Config(format!(
                    "level {} pair maps {:?} to {:?}",
                    k + 1,
                    probe.shape(),
                    back.shape()
                )));
            }
        }
        let mut stack = StylizerStack {
            encoders,
            decoders,
            channels,
            alpha: 1.0,
            eps_reg: DEFAULT_EPS_REG,
            eig_floor: DEFAULT_EIG_FLOOR,
        };
        stack.set_alpha(alpha)?;
        Ok(stack)
    }

    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha must lie in [0,1], got {alpha}")));
        }
        self.alpha = alpha;
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.encoders.len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn encoder(&self, level: usize) -> &Network<T> {
        &self.encoders[level - 1]
    }

    pub fn decoder(&self, level: usize) -> &Network<T> {
        &self.decoders[level - 1]
    }

    /// Every network with its checkpoint role, `encoder{k}` / `decoder{k}`.
    pub fn roles(&self) -> Vec<(String, &Network<T>)> {
        let mut out = Vec::new();
        for k in 1..=self.levels() {
            out.push((format!("encoder{k}"), self.encoder(k)));
            out.push((format!("decoder{k}"), self.decoder(k)));
        }
        out
    }

    fn check_image(&self, what: &str, img: &Tensor<T>, level: usize) -> Result<()> {
        if level == 0 || level > self.levels() {
            return Err(Error::Config(format!("level {level} outside 1..={}", self.levels())));
        }
        let [c, h, w] = img.shape()[..] else {
            return Err(Error::dim("stylize", format!("{what} must be C×H×W, got {:?}", img.shape())));
        };
        if c != self.channels {
            return Err(Error::dim(
                "stylize",
                format!("{what} has {c} channels, stack expects {}", self.channels),
            ));
        }
        let m = 1 << (level - 1);
        if h % m != 0 || w % m != 0 {
            return Err(Error::dim(
                "stylize",
                format!("{what} is {h}x{w}; level {level} needs dimensions divisible by {m}"),
            ));
        }
        Ok(())
    }

    /// Level-`level` features of one `C×H×W` image as `(features, h, w)`.
    pub fn encode(&self, img: &Tensor<T>, level: usize) -> Result<(FeatureMatrix, usize, usize)> {
        let mut shape = vec![1];
        shape.extend_from_slice(img.shape());
        let (f, _) = self.encoder(level).forward(&img.clone().reshape(&shape)?, &[])?;
        let (_, _, h, w) = f.dims4("encode")?;
        Ok((FeatureMatrix::from_tensor(&f)?, h, w))
    }

    fn decode(&self, f: &FeatureMatrix, h: usize, w: usize, level: usize) -> Result<Tensor<T>> {
        let (y, _) = self.decoder(level).forward(&f.to_tensor(h, w)?, &[])?;
        let shape = y.shape()[1..].to_vec();
        Ok(y.map(|v| v.max(-T::one()).min(T::one())).reshape(&shape)?)
    }

    /// One encode / transform / decode pass at `level`, output clamped to
    /// `[-1, 1]`.
    pub fn stylize_single_level(&self, content: &Tensor<T>, style: &Tensor<T>, level: usize) -> Result<Tensor<T>> {
        self.check_image("content", content, level)?;
        self.check_image("style", style, level)?;
        let (fc, h, w) = self.encode(content, level)?;
        let (fs, _, _) = self.encode(style, level)?;
        let out = wct(&fc, &fs, self.alpha, self.eps_reg, self.eig_floor)?;
        self.decode(&out, h, w, level)
    }

    /// Coarse to fine: the deepest level first, then each shallower one,
    /// always re-encoding the current image against the original style.
    pub fn stylize(&self, content: &Tensor<T>, style: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_image("content", content, self.levels())?;
        self.check_image("style", style, self.levels())?;
        let mut img = content.clone();
        for level in (1..=self.levels()).rev() {
            img = self.stylize_single_level(&img, style, level)?;
        }
        Ok(img)
    }

    /// Unregularized covariance of an image's level-`level` encoding.
    pub fn encoded_covariance(&self, img: &Tensor<T>, level: usize) -> Result<Matrix> {
        self.check_image("image", img, level)?;
        feature_covariance(&self.encode(img, level)?.0)
    }
}

/// Trains one autoencoder pair per level on `train` and reports held-out
/// reconstruction PSNR for each.
pub fn train_stack<T: Real>(
    train: &[Tensor<T>],
    heldout: &[Tensor<T>],
    levels: usize,
    cfg: &AutoencoderConfig,
) -> Result<(StylizerStack<T>, Vec<TrainReport>)> {
    let channels = match train.first().map(|t| t.shape()) {
        Some([c, _, _]) => *c,
        _ => return Err(Error::Config("autoencoder training needs C×H×W images".into())),
    };
    let mut encoders = Vec::new();
    let mut decoders = Vec::new();
    let mut reports = Vec::new();
    for level in 1..=levels {
        let seed = cfg.seed.wrapping_add(1000 * level as u64);
        let mut enc = build_encoder(level, channels, seed)?;
        let mut dec = build_decoder(level, channels, seed + 1)?;
        let level_cfg = AutoencoderConfig { seed, ..cfg.clone() };
        let report = train_autoencoder(&mut enc, &mut dec, train, heldout, &level_cfg)?;
        log::info!(
            "level {level}: held-out PSNR {:.2} dB",
            report.heldout_psnr.unwrap_or(f64::NAN)
        );
        encoders.push(enc);
        decoders.push(dec);
        reports.push(report);
    }
    Ok((StylizerStack::new(encoders, decoders, 1.0)?, reports))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pairing {
    /// Every content with every style, content-major.
    AllPairs,
    /// The `i`-th content with the `i`-th style.
    Zip,
}

impl FromStr for Pairing {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all_pairs" => Ok(Pairing::AllPairs),
            "zip" => Ok(Pairing::Zip),
            _ => Err(Error::Config(format!("unknown pairing `{s}` (all_pairs, zip)"))),
        }
    }
}

impl fmt::Display for Pairing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pairing::AllPairs => "all_pairs",
            Pairing::Zip => "zip",
        })
    }
}

/// An image with a caller-chosen identifier (usually its path).
#[derive(Clone, Debug)]
pub struct Named<T> {
    pub id: String,
    pub image: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct Stylized<T> {
    pub content_id: String,
    pub style_id: String,
    pub alpha: f64,
    pub image: Tensor<T>,
}

pub fn pairs(n_content: usize, n_style: usize, pairing: Pairing) -> Result<Vec<(usize, usize)>> {
    if n_content == 0 || n_style == 0 {
        return Err(Error::Config("stylization needs at least one content and one style image".into()));
    }
    match pairing {
        Pairing::AllPairs => Ok((0..n_content).flat_map(|c| (0..n_style).map(move |s| (c, s))).collect()),
        Pairing::Zip if n_content == n_style => Ok((0..n_content).map(|i| (i, i)).collect()),
        Pairing::Zip => Err(Error::Config(format!(
            "zip pairing needs equal counts, got {n_content} contents and {n_style} styles"
        ))),
    }
}

/// Stylizes every pair; pairs run in parallel over the frozen stack.
pub fn batch_stylize<T: Real>(
    contents: &[Named<T>],
    styles: &[Named<T>],
    pairing: Pairing,
    stack: &StylizerStack<T>,
) -> Result<Vec<Stylized<T>>> {
    let pairs = pairs(contents.len(), styles.len(), pairing)?;
    par::map_range(pairs.len(), |i| {
        let (c, s) = pairs[i];
        Ok(Stylized {
            content_id: contents[c].id.clone(),
            style_id: styles[s].id.clone(),
            alpha: stack.alpha,
            image: stack.stylize(&contents[c].image, &styles[s].image)?,
        })
    })
    .into_iter()
    .collect()
}

pub const STYLE_MANIFEST_FILE: &str = "stylized.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct StyleRow {
    pub content_path: String,
    pub style_path: String,
    pub output_path: PathBuf,
    pub alpha: f64,
    pub levels: usize,
}

/// Writes each output as `styled_{i:04}.{pgm|ppm}` plus `stylized.csv`, then
/// checks that every listed file exists and decodes.
pub fn write_stylized<T: Real>(dir: &Path, results: &[Stylized<T>], levels: usize) -> Result<Vec<StyleRow>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rows = Vec::new();
    for (i, r) in results.iter().enumerate() {
        let name = PathBuf::from(format!("styled_{i:04}.{}", pnm::extension(r.image.shape()[0])));
        pnm::save_image(&r.image, &dir.join(&name))?;
        rows.push(StyleRow {
            content_path: r.content_id.clone(),
            style_path: r.style_id.clone(),
            output_path: name,
            alpha: r.alpha,
            levels,
        });
    }
    let mut csv = String::from("content_path,style_path,output_path,alpha,levels\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.content_path,
            r.style_path,
            r.output_path.display(),
            r.alpha,
            r.levels
        ));
    }
    let path = dir.join(STYLE_MANIFEST_FILE);
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    for r in &rows {
        pnm::load_image::<f32>(&dir.join(&r.output_path))?;
    }
    Ok(rows)
}
