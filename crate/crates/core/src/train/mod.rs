//! Optimizers and the training procedures: adversarial (standard and
//! Wasserstein with weight clipping), classifier and autoencoder.

mod augment;
mod autoencoder;
mod classifier;
mod gan;
mod optim;

pub use augment::{affine_augment, AugmentRanges, AUGMENT_FILL};
pub use autoencoder::{psnr, reconstruction_psnr, train_autoencoder, AutoencoderConfig};
pub use classifier::{accuracy, class_probabilities, lr_at, train_classifier, ClassifierConfig};
pub use gan::{
    gan_step, generate_images, toy_wgan_1d, train_gan, train_wgan, wgan_step, GanConfig, GanState, ToyConfig, ToyRun, WganConfig,
    WganState,
};
pub use optim::{OptimKind, Optimizer};

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};

/// Per-step (or per-epoch) metric series of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Name of the row index column, `step` or `epoch`.
    pub index: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub wall_time_s: f64,
    /// Parameter checksum of the network(s) at the end of the run.
    pub checksum: String,
    pub best_epoch: Option<usize>,
    pub best_val_accuracy: Option<f64>,
    pub heldout_psnr: Option<f64>,
}

impl TrainReport {
    fn new(index: &str, columns: &[&str]) -> Self {
        TrainReport {
            index: index.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            wall_time_s: 0.0,
            checksum: String::new(),
            best_epoch: None,
            best_val_accuracy: None,
            heldout_psnr: None,
        }
    }

    fn push(&mut self, row: Vec<f64>) -> Result<()> {
        debug_assert_eq!(row.len(), self.columns.len());
        if let Some((name, v)) = self.columns.iter().zip(&row).find(|(_, v)| !v.is_finite()) {
            return Err(Error::numeric(
                "training",
                format!("{name} became {v} at {} {}; training aborted", self.index, self.rows.len()),
            ));
        }
        self.rows.push(row);
        Ok(())
    }

    fn finish(&mut self, started: Instant, checksum: String) {
        self.wall_time_s = started.elapsed().as_secs_f64();
        self.checksum = checksum;
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn series(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    /// Metrics as CSV with a header row. Wall time is excluded so that
    /// same-seed runs produce identical text.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{},{}\n", self.index, self.columns.join(","));
        for (i, r) in self.rows.iter().enumerate() {
            let _ = write!(s, "{i}");
            for v in r {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}
