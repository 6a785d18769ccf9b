//! Whitening-coloring transform on flattened feature maps.
//!
//! Whitening removes the content features' mean and covariance structure;
//! coloring imposes the style features' covariance and mean. Both use the
//! symmetric fractional powers from [`crate::linalg`].

use crate::error::{Error, Result};
use crate::linalg::{mat_power_sym, Matrix};
use crate::tensor::{Real, Tensor};

/// Default covariance regularizer added to the diagonal.
pub const DEFAULT_EPS_REG: f64 = 1e-5;
/// Default eigenvalue floor applied before fractional powers.
pub const DEFAULT_EIG_FLOOR: f64 = 1e-8;

/// `C × N` feature samples (one row per channel, `N = H·W`).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    channels: usize,
    samples: usize,
    values: Vec<f64>,
    mean: Option<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(channels: usize, samples: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != channels * samples || channels == 0 {
            return Err(Error::dim(
                "feature_matrix",
                format!("{channels}x{samples} needs {} values, got {}", channels * samples, values.len()),
            ));
        }
        Ok(FeatureMatrix {
            channels,
            samples,
            values,
            mean: None,
        })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::dim("feature_matrix", "ragged rows"));
        }
        Self::new(rows.len(), n, rows.concat())
    }

    /// Flattens a `1×C×H×W` (or `C×H×W`) feature map.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let (c, hw) = match t.shape() {
            [1, c, h, w] | [c, h, w] => (*c, h * w),
            s => return Err(Error::dim("feature_matrix", format!("expected one feature map, got {s:?}"))),
        };
        Self::new(c, hw, t.data().iter().map(|v| v.to_f64()).collect())
    }

    /// Back to a `1×C×H×W` tensor.
    pub fn to_tensor<T: Real>(&self, h: usize, w: usize) -> Result<Tensor<T>> {
        if h * w != self.samples {
            return Err(Error::dim("feature_matrix", format!("{h}x{w} != {} samples", self.samples)));
        }
        Tensor::new(
            &[1, self.channels, h, w],
            self.raw_values().into_iter().map(T::from_f64).collect(),
        )
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Current (possibly centered) values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Recorded per-channel mean, present after centering.
    pub fn mean(&self) -> Option<&[f64]> {
        self.mean.as_deref()
    }

    /// Values with any recorded mean added back.
    pub fn raw_values(&self) -> Vec<f64> {
        match &self.mean {
            None => self.values.clone(),
            Some(m) => self
                .values
                .chunks(self.samples)
                .zip(m)
                .flat_map(|(row, &mu)| row.iter().map(move |v| v + mu))
                .collect(),
        }
    }

    /// Per-channel mean of the current values.
    pub fn channel_means(&self) -> Vec<f64> {
        self.values
            .chunks(self.samples)
            .map(|r| r.iter().sum::<f64>() / self.samples as f64)
            .collect()
    }

    fn require_samples(&self, op: &'static str) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::Degenerate {
                op,
                detail: format!("covariance needs at least 2 samples, got {}", self.samples),
            });
        }
        Ok(())
    }

    /// Subtracts the per-channel mean, accumulating it into the recorded mean.
    pub fn center(&mut self) {
        let means = self.channel_means();
        for (row, &mu) in self.values.chunks_mut(self.samples).zip(&means) {
            row.iter_mut().for_each(|v| *v -= mu);
        }
        match &mut self.mean {
            None => self.mean = Some(means),
            Some(m) => m.iter_mut().zip(&means).for_each(|(a, b)| *a += b),
        }
    }

    /// `(1/N)·X·Xᵀ` of the current values, without centering.
    fn second_moment(&self) -> Matrix {
        let (c, n) = (self.channels, self.samples);
        let mut cov = Matrix::zeros(c, c);
        for i in 0..c {
            let ri = &self.values[i * n..(i + 1) * n];
            for j in i..c {
                let rj = &self.values[j * n..(j + 1) * n];
                let v = ri.iter().zip(rj).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        cov
    }

    fn apply(&self, m: &Matrix) -> Result<FeatureMatrix> {
        let x = Matrix::new(self.channels, self.samples, self.values.clone())?;
        let y = m.matmul(&x)?;
        FeatureMatrix::new(y.rows(), self.samples, y.data().to_vec())
    }
}

/// Centers `f` in place (recording its mean) and returns
/// `(1/N)·f·fᵀ + eps_reg·I`.
pub fn covariance(f: &mut FeatureMatrix, eps_reg: f64) -> Result<Matrix> {
    if eps_reg < 0.0 {
        return Err(Error::Config(format!("eps_reg must be >= 0, got {eps_reg}")));
    }
    f.require_samples("covariance")?;
    f.center();
    let mut cov = f.second_moment();
    for i in 0..f.channels {
        cov[(i, i)] += eps_reg;
    }
    Ok(cov)
}

/// Covariance of a feature matrix without regularization or mutation.
pub fn feature_covariance(f: &FeatureMatrix) -> Result<Matrix> {
    let mut c = f.clone();
    covariance(&mut c, 0.0)
}

/// `cov(f)^(−1/2)·(f − mean)`.
pub fn whiten(f: &FeatureMatrix, eps_reg: f64, eig_floor: f64) -> Result<FeatureMatrix> {
    let mut centered = f.clone();
    let cov = covariance(&mut centered, eps_reg)?;
    let inv_sqrt = mat_power_sym(&cov, -0.5, eig_floor)?;
    centered.apply(&inv_sqrt)
}

/// `cov(style)^(1/2)·f_w + mean(style)`.
pub fn color(f_w: &FeatureMatrix, style: &FeatureMatrix, eps_reg: f64, eig_floor: f64) -> Result<FeatureMatrix> {
    if f_w.channels != style.channels {
        return Err(Error::dim(
            "color",
            format!("whitened features have {} channels, style has {}", f_w.channels, style.channels),
        ));
    }
    let mut s = style.clone();
    let cov = covariance(&mut s, eps_reg)?;
    let sqrt = mat_power_sym(&cov, 0.5, eig_floor)?;
    let mut out = f_w.apply(&sqrt)?;
    let mean = s.mean.expect("covariance records the mean");
    for (row, mu) in out.values.chunks_mut(out.samples).zip(mean) {
        row.iter_mut().for_each(|v| *v += mu);
    }
    Ok(out)
}

/// `alpha·color(whiten(content), style) + (1 − alpha)·content`.
pub fn wct(
    content: &FeatureMatrix,
    style: &FeatureMatrix,
    alpha: f64,
    eps_reg: f64,
    eig_floor: f64,
) -> Result<FeatureMatrix> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0,1], got {alpha}")));
    }
    let colored = color(&whiten(content, eps_reg, eig_floor)?, style, eps_reg, eig_floor)?;
    let raw = content.raw_values();
    let values = colored
        .values
        .iter()
        .zip(&raw)
        .map(|(&x, &c)| alpha * x + (1.0 - alpha) * c)
        .collect();
    FeatureMatrix::new(content.channels, content.samples, values)
}
