use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Output head of a discriminator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    /// Probability in (0,1) for the standard adversarial loss.
    Sigmoid,
    /// Unbounded critic score.
    Linear,
}

/// Architecture tag. Its text form is stored in checkpoints and is enough to
/// rebuild the layer stack.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NetKind {
    Generator { latent_dim: usize, img_size: usize, channels: usize, base: usize },
    Discriminator { img_size: usize, channels: usize, base: usize, head: Head },
    Encoder { level: usize, channels: usize },
    Decoder { level: usize, channels: usize },
    Classifier { classes: usize, img_size: usize, channels: usize, base: usize },
    /// Hand-built network; not rebuildable from the tag alone.
    Custom(String),
}

impl fmt::Display for NetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetKind::Generator { latent_dim, img_size, channels, base } => {
                write!(f, "generator latent={latent_dim} size={img_size} channels={channels} base={base}")
            }
            NetKind::Discriminator { img_size, channels, base, head } => {
                let head = match head {
                    Head::Sigmoid => "sigmoid",
                    Head::Linear => "linear",
                };
                write!(f, "discriminator size={img_size} channels={channels} base={base} head={head}")
            }
            NetKind::Encoder { level, channels } => write!(f, "encoder level={level} channels={channels}"),
            NetKind::Decoder { level, channels } => write!(f, "decoder level={level} channels={channels}"),
            NetKind::Classifier { classes, img_size, channels, base } => {
                write!(f, "classifier classes={classes} size={img_size} channels={channels} base={base}")
            }
            NetKind::Custom(name) => write!(f, "custom name={name}"),
        }
    }
}

impl FromStr for NetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut words = s.split_whitespace();
        let family = words.next().ok_or_else(|| Error::Checkpoint("empty network tag".into()))?;
        let mut kv = BTreeMap::new();
        for w in words {
            let (k, v) = w
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("malformed network tag field `{w}`")))?;
            kv.insert(k, v);
        }
        let num = |k: &str| -> Result<usize> {
            kv.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("network tag `{s}` lacks numeric `{k}`")))
        };
        Ok(match family {
            "generator" => NetKind::Generator {
                latent_dim: num("latent")?,
                img_size: num("size")?,
                channels: num("channels")?,
                base: num("base")?,
            },
            "discriminator" => NetKind::Discriminator {
                img_size: num("size")?,
                channels: num("channels")?,
                base: num("base")?,
                head: match kv.get("head") {
                    Some(&"sigmoid") => Head::Sigmoid,
                    Some(&"linear") => Head::Linear,
                    _ => return Err(Error::Checkpoint(format!("network tag `{s}` has no valid head"))),
                },
            },
            "encoder" => NetKind::Encoder {
                level: num("level")?,
                channels: num("channels")?,
            },
            "decoder" => NetKind::Decoder {
                level: num("level")?,
                channels: num("channels")?,
            },
            "classifier" => NetKind::Classifier {
                classes: num("classes")?,
                img_size: num("size")?,
                channels: num("channels")?,
                base: num("base")?,
            },
            "custom" => NetKind::Custom(kv.get("name").copied().unwrap_or("").to_string()),
            other => return Err(Error::Checkpoint(format!("unknown network family `{other}`"))),
        })
    }
}
