//! Per-channel batch normalization over `N·H·W`.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub(crate) struct BnForward<T> {
    pub out: Vec<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    /// Batch mean and biased variance, present in train mode.
    pub batch_stats: Option<(Vec<T>, Vec<T>)>,
}

/// Either normalize with batch moments or with supplied running moments.
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a, T> {
    Train,
    Eval { mean: &'a [T], var: &'a [T] },
}

pub(crate) fn forward<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mode: BnMode<'_, T>,
    eps: T,
) -> Result<BnForward<T>> {
    let (n, c, h, w) = x.dims4("batchnorm2d")?;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::dim(
            "batchnorm2d",
            format!("gamma/beta length {}/{} != channels {c}", gamma.len(), beta.len()),
        ));
    }
    if eps <= T::zero() {
        return Err(Error::Config("batchnorm eps must be > 0".into()));
    }
    let hw = h * w;
    let m = n * hw;
    let xd = x.data();
    let plane = |s: usize, ch: usize| &xd[(s * c + ch) * hw..(s * c + ch + 1) * hw];

    let (mean, var, batch_stats) = match mode {
        BnMode::Train => {
            if m < 2 {
                return Err(Error::Degenerate {
                    op: "batchnorm2d",
                    detail: "train mode needs at least two values per channel (N·H·W >= 2)".into(),
                });
            }
            let inv_m = T::from_f64(1.0 / m as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mu = (0..n).map(|s| plane(s, ch).iter().copied().sum::<T>()).sum::<T>() * inv_m;
                let v = (0..n)
                    .map(|s| plane(s, ch).iter().map(|&v| (v - mu) * (v - mu)).sum::<T>())
                    .sum::<T>()
                    * inv_m;
                mean[ch] = mu;
                var[ch] = v;
            }
            (mean.clone(), var.clone(), Some((mean, var)))
        }
        BnMode::Eval { mean, var } => {
            if mean.len() != c || var.len() != c {
                return Err(Error::dim("batchnorm2d", "running stats length != channels"));
            }
            (mean.to_vec(), var.to_vec(), None)
        }
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            for i in base..base + hw {
                let xh = (xd[i] - mean[ch]) * inv_std[ch];
                xhat[i] = xh;
                out[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    Ok(BnForward {
        out,
        xhat,
        inv_std,
        batch_stats,
    })
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn backward<T: Real>(
    shape: (usize, usize, usize, usize),
    dy: &[T],
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    train: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (n, c, h, w) = shape;
    let hw = h * w;
    let m = T::from_f64((n * hw) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            for i in base..base + hw {
                dgamma[ch] += dy[i] * xhat[i];
                dbeta[ch] += dy[i];
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            let k = gamma[ch] * inv_std[ch];
            for i in base..base + hw {
                dx[i] = if train {
                    k * (dy[i] - (dbeta[ch] + xhat[i] * dgamma[ch]) / m)
                } else {
                    k * dy[i]
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}
