//! Image codec, synthetic corpus, manifests, checkpoints and configuration.

pub mod checkpoint;
pub mod config;
pub mod manifest;
pub mod pnm;
pub mod synth;

pub use checkpoint::{load_checkpoint_into, read_checkpoint, save_checkpoint, Checkpoint, Counters};
pub use config::{write_provenance, RunConfig};
pub use manifest::{
    split_dataset, stratified_split, synth_corpus, synth_dataset, DatasetManifest, ManifestEntry, Provenance,
    DEFAULT_RATIOS,
};
pub use pnm::{load_image, save_image};
pub use synth::{Kind, Modality, Quadrant, SynthOptions};

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes rows as comma-separated text with a header line.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
