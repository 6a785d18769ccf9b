//! INI-style run configuration with a fixed key registry.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Every accepted key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("run.seed", "0", "master seed for every random stream"),
    ("data.img_size", "64", "synthetic image side, 32 or 64"),
    ("data.modality", "CFP", "CFP (3 channels) or FA (1 channel)"),
    ("data.n_per_class", "200", "synthetic images per class"),
    ("data.ratios", "0.7,0.1,0.2", "train,val,test split fractions"),
    ("gan.batch_size", "16", "images per adversarial step"),
    ("gan.latent_dim", "100", "latent vector length"),
    ("gan.lr_g", "0.0002", "generator learning rate (Adam, b1 0.5)"),
    ("gan.lr_d", "0.0002", "discriminator learning rate (Adam, b1 0.5)"),
    ("gan.steps", "1000", "adversarial steps"),
    ("gan.base_ch", "8", "base channel width of generator and discriminator"),
    ("gan.saturating", "false", "use log(1-D(G(z))) for the generator"),
    ("wgan.clip_c", "0.01", "critic weight clipping bound"),
    ("wgan.n_critic", "5", "critic updates per generator update"),
    ("wgan.lr", "0.00005", "RMSprop learning rate for both networks"),
    ("wgan.steps", "2000", "generator updates"),
    ("wgan.batch_size", "16", "images per critic pass"),
    ("wgan.latent_dim", "100", "latent vector length"),
    ("wgan.base_ch", "8", "base channel width of generator and critic"),
    ("classifier.epochs", "40", "training epochs"),
    ("classifier.batch_size", "16", "images per step"),
    ("classifier.lr_high", "0.0001", "Adam learning rate for the first half"),
    ("classifier.lr_low", "0.00001", "Adam learning rate for the second half"),
    ("classifier.augment_prob", "0.7", "per-sample affine augmentation probability"),
    ("classifier.base_ch", "8", "base channel width"),
    ("ae.steps", "2000", "autoencoder steps per level"),
    ("ae.lr", "0.001", "autoencoder Adam learning rate"),
    ("ae.batch_size", "8", "images per autoencoder step"),
    ("ae.levels", "4", "deepest encoder level to train"),
    ("style.alpha", "1.0", "stylization strength in [0,1]"),
    ("style.levels", "4", "deepest level used by multi-level stylization"),
    ("style.eps_reg", "0.00001", "covariance regularizer"),
    ("style.eig_floor", "0.00000001", "eigenvalue floor for matrix powers"),
    ("sweep.sizes", "50,100,200", "training-set sizes for the sample-size sweep"),
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> Option<&'static (&'static str, &'static str, &'static str)> {
    KEYS.iter().find(|(k, _, _)| *k == key)
}

impl RunConfig {
    /// Parses `[section]` headers with `key = value` lines, or flat
    /// `section.key = value` lines. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(s) = line.strip_prefix('[') {
                section = s
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("config line {}: unterminated section", n + 1)))?
                    .trim()
                    .to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            let key = if k.contains('.') || section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            cfg.set(&key, v.trim()).map_err(|e| Error::Config(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if known(key).is_none() {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        let (_, default, _) = known(key).ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
        Ok(self.values.get(key).map(String::as_str).unwrap_or(default))
    }

    pub fn get<V: FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| Error::Config(format!("config key `{key}` has invalid value `{raw}`")))
    }

    pub fn get_list<V: FromStr>(&self, key: &str) -> Result<Vec<V>> {
        let raw = self.raw(key)?;
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("config key `{key}` has invalid list `{raw}`")))
            })
            .collect()
    }

    pub fn ratios(&self) -> Result<(f64, f64, f64)> {
        match self.get_list::<f64>("data.ratios")?[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::Config("data.ratios needs three values".into())),
        }
    }

    /// Every key with its effective value, marking overridden ones.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for (k, default, doc) in KEYS {
            let v = self.values.get(*k).map(String::as_str).unwrap_or(default);
            let origin = if self.values.contains_key(*k) { "set" } else { "default" };
            let _ = writeln!(s, "{k} = {v}  # {origin}; {doc}");
        }
        s
    }
}

pub const PROVENANCE_FILE: &str = "provenance.txt";

/// Writes `dir/provenance.txt`: command, seed, full config echo and the
/// SHA-256 of each artifact.
pub fn write_provenance(dir: &Path, command: &str, seed: u64, cfg: &RunConfig, artifacts: &[&Path]) -> Result<()> {
    let mut s = format!("command = {command}\nseed = {seed}\n\n[config]\n{}\n[artifacts]\n", cfg.echo());
    for a in artifacts {
        let bytes = fs::read(a).map_err(|e| Error::io(*a, e))?;
        let hex: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        let _ = writeln!(s, "{} sha256={hex}", a.display());
    }
    let path = dir.join(PROVENANCE_FILE);
    fs::write(&path, s).map_err(|e| Error::io(&path, e))
}
