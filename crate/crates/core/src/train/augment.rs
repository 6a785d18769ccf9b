use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Value written where the transformed image samples outside the source:
/// pixel 0, i.e. black.
pub const AUGMENT_FILL: f64 = -1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentRanges {
    pub max_rotation_deg: f64,
    /// Fraction of width/height.
    pub max_translate: f64,
    pub flip_prob: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            max_rotation_deg: 15.0,
            max_translate: 0.1,
            flip_prob: 0.5,
        }
    }
}

impl AugmentRanges {
    pub fn none() -> Self {
        AugmentRanges {
            max_rotation_deg: 0.0,
            max_translate: 0.0,
            flip_prob: 0.0,
        }
    }
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, r: f64) -> f64 {
    if r > 0.0 {
        rng.gen_range(-r..=r)
    } else {
        0.0
    }
}

/// With probability `prob`, rotates, translates and possibly mirrors a
/// `C×H×W` image about its centre with bilinear resampling; otherwise
/// returns it unchanged.
pub fn affine_augment<T: Real, R: Rng + ?Sized>(
    img: &Tensor<T>,
    prob: f64,
    ranges: &AugmentRanges,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::Config(format!("augmentation probability must lie in [0,1], got {prob}")));
    }
    let [c, h, w] = img.shape()[..] else {
        return Err(Error::dim("affine_augment", format!("expects C×H×W, got {:?}", img.shape())));
    };
    if rng.gen::<f64>() >= prob {
        return Ok(img.clone());
    }
    let theta = symmetric(rng, ranges.max_rotation_deg).to_radians();
    let tx = symmetric(rng, ranges.max_translate) * w as f64;
    let ty = symmetric(rng, ranges.max_translate) * h as f64;
    let flip = rng.gen::<f64>() < ranges.flip_prob;

    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (sin, cos) = theta.sin_cos();
    let src = img.data();
    let fill = T::from_f64(AUGMENT_FILL);
    let mut out = vec![fill; img.numel()];
    let at = |ch: usize, yi: isize, xi: isize| -> f64 {
        if yi < 0 || xi < 0 || yi >= h as isize || xi >= w as isize {
            AUGMENT_FILL
        } else {
            src[(ch * h + yi as usize) * w + xi as usize].to_f64()
        }
    };
    for y in 0..h {
        for x in 0..w {
            // Inverse map: output pixel → source coordinates.
            let (dx, dy) = (x as f64 - cx - tx, y as f64 - cy - ty);
            let mut sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            if flip {
                sx = w as f64 - 1.0 - sx;
            }
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..c {
                let mut v = (1.0 - fy) * (1.0 - fx) * at(ch, y0, x0);
                if fx > 0.0 {
                    v += (1.0 - fy) * fx * at(ch, y0, x0 + 1);
                }
                if fy > 0.0 {
                    v += fy * (1.0 - fx) * at(ch, y0 + 1, x0);
                    if fx > 0.0 {
                        v += fy * fx * at(ch, y0 + 1, x0 + 1);
                    }
                }
                out[(ch * h + y) * w + x] = T::from_f64(v);
            }
        }
    }
    Tensor::new(img.shape(), out)
}
