//! Convolution kernels: im2col + GEMM, parallel over the batch axis.

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{gemm, Real, Tensor};

/// Geometry of a 2-D convolution from an `h×w` image to an `ho×wo` map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(
        channels: usize,
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("convolution stride must be >= 1".into()));
        }
        let ph = h + 2 * pad;
        let pw = w + 2 * pad;
        if ph < kh || pw < kw {
            return Err(Error::Config(format!(
                "kernel {kh}x{kw} larger than padded input {ph}x{pw}"
            )));
        }
        Ok(ConvGeom {
            channels,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            ho: (ph - kh) / stride + 1,
            wo: (pw - kw) / stride + 1,
        })
    }

    fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfolds one `channels×h×w` image into a `(channels·kh·kw) × (ho·wo)` matrix.
pub fn im2col<T: Real>(img: &[T], g: &ConvGeom, cols: &mut [T]) {
    let hw_out = g.col_cols();
    for c in 0..g.channels {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix >= 0 && ix < g.w as isize {
                            src[ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `img`.
pub fn col2im_add<T: Real>(cols: &[T], g: &ConvGeom, img: &mut [T]) {
    let hw_out = g.col_cols();
    for c in 0..g.channels {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T: Real>(op: &'static str, bias: &Tensor<T>, channels: usize) -> Result<()> {
    if bias.shape() != [channels] {
        return Err(Error::dim(
            op,
            format!("bias shape {:?}, expected [{channels}]", bias.shape()),
        ));
    }
    Ok(())
}

/// Validated shapes for `conv2d(x: NCHW, w: OIHW)`.
pub fn conv2d_geom<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, ConvGeom)> {
    let (n, c, h, wd) = x.dims4("conv2d")?;
    let (o, i, kh, kw) = w.dims4("conv2d")?;
    if i != c {
        return Err(Error::dim(
            "conv2d",
            format!("input channels (axis 1) {c} != weight in-channels (axis 1) {i}"),
        ));
    }
    let g = ConvGeom::new(c, h, wd, kh, kw, stride, pad)?;
    Ok((n, o, g))
}

pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, o, g) = conv2d_geom(x, w, stride, pad)?;
    check_bias("conv2d", b, o)?;
    let in_per = g.channels * g.h * g.w;
    let out_per = o * g.col_cols();
    let mut out = vec![T::zero(); n * out_per];
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    par::for_each_chunk(&mut out, out_per, |s, dst| {
        let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
        im2col(&xd[s * in_per..(s + 1) * in_per], &g, &mut cols);
        for (oc, plane) in dst.chunks_mut(g.col_cols()).enumerate() {
            plane.fill(bd[oc]);
        }
        gemm(o, g.col_rows(), g.col_cols(), wd, false, &cols, false, T::one(), dst);
    });
    Tensor::new(&[n, o, g.ho, g.wo], out)
}

/// Gradients of `conv2d` w.r.t. input, weight and bias (each only if requested).
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &Tensor<T>,
    stride: usize,
    pad: usize,
    need: [bool; 3],
) -> Result<[Option<Vec<T>>; 3]> {
    let (n, o, g) = conv2d_geom(x, w, stride, pad)?;
    let in_per = g.channels * g.h * g.w;
    let out_per = o * g.col_cols();
    let (xd, wd, dd) = (x.data(), w.data(), dout.data());
    let rows = g.col_rows();
    let hw = g.col_cols();

    let dx = need[0].then(|| {
        let mut dx = vec![T::zero(); n * in_per];
        par::for_each_chunk(&mut dx, in_per, |s, dst| {
            let mut dcols = vec![T::zero(); rows * hw];
            gemm(rows, o, hw, wd, true, &dd[s * out_per..(s + 1) * out_per], false, T::zero(), &mut dcols);
            col2im_add(&dcols, &g, dst);
        });
        dx
    });

    let dw = need[1].then(|| {
        let partials = par::map_range(n, |s| {
            let mut cols = vec![T::zero(); rows * hw];
            im2col(&xd[s * in_per..(s + 1) * in_per], &g, &mut cols);
            let mut part = vec![T::zero(); o * rows];
            gemm(o, hw, rows, &dd[s * out_per..(s + 1) * out_per], false, &cols, true, T::zero(), &mut part);
            part
        });
        sum_ordered(partials, o * rows)
    });

    let db = need[2].then(|| channel_sums(dd, n, o, hw));
    Ok([dx, dw, db])
}

/// Validated shapes for `conv_transpose2d(x: NCHW, w: IOHW)`; the returned
/// geometry maps the *output* image to the input grid.
pub fn conv_transpose2d_geom<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, usize, ConvGeom)> {
    let (n, c, h, wd) = x.dims4("conv_transpose2d")?;
    let (i, o, kh, kw) = w.dims4("conv_transpose2d")?;
    if i != c {
        return Err(Error::dim(
            "conv_transpose2d",
            format!("input channels (axis 1) {c} != weight in-channels (axis 0) {i}"),
        ));
    }
    if stride == 0 {
        return Err(Error::Config("convolution stride must be >= 1".into()));
    }
    let ho = ((h - 1) * stride + kh) as isize - 2 * pad as isize;
    let wo = ((wd - 1) * stride + kw) as isize - 2 * pad as isize;
    if ho < 1 || wo < 1 {
        return Err(Error::Config(format!(
            "transposed convolution output {ho}x{wo} is empty"
        )));
    }
    let g = ConvGeom::new(o, ho as usize, wo as usize, kh, kw, stride, pad)?;
    debug_assert_eq!((g.ho, g.wo), (h, wd));
    Ok((n, c, o, g))
}

pub fn conv_transpose2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, c, o, g) = conv_transpose2d_geom(x, w, stride, pad)?;
    check_bias("conv_transpose2d", b, o)?;
    let in_per = c * g.col_cols();
    let out_per = o * g.h * g.w;
    let (rows, hw) = (g.col_rows(), g.col_cols());
    let mut out = vec![T::zero(); n * out_per];
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    par::for_each_chunk(&mut out, out_per, |s, dst| {
        let mut cols = vec![T::zero(); rows * hw];
        gemm(rows, c, hw, wd, true, &xd[s * in_per..(s + 1) * in_per], false, T::zero(), &mut cols);
        for (oc, plane) in dst.chunks_mut(g.h * g.w).enumerate() {
            plane.fill(bd[oc]);
        }
        col2im_add(&cols, &g, dst);
    });
    Tensor::new(&[n, o, g.h, g.w], out)
}

pub fn conv_transpose2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &Tensor<T>,
    stride: usize,
    pad: usize,
    need: [bool; 3],
) -> Result<[Option<Vec<T>>; 3]> {
    let (n, c, o, g) = conv_transpose2d_geom(x, w, stride, pad)?;
    let in_per = c * g.col_cols();
    let out_per = o * g.h * g.w;
    let (rows, hw) = (g.col_rows(), g.col_cols());
    let (xd, wd, dd) = (x.data(), w.data(), dout.data());

    let unfold = |s: usize| {
        let mut dcols = vec![T::zero(); rows * hw];
        im2col(&dd[s * out_per..(s + 1) * out_per], &g, &mut dcols);
        dcols
    };

    let dx = need[0].then(|| {
        let mut dx = vec![T::zero(); n * in_per];
        par::for_each_chunk(&mut dx, in_per, |s, dst| {
            let dcols = unfold(s);
            gemm(c, rows, hw, wd, false, &dcols, false, T::zero(), dst);
        });
        dx
    });

    let dw = need[1].then(|| {
        let partials = par::map_range(n, |s| {
            let dcols = unfold(s);
            let mut part = vec![T::zero(); c * rows];
            gemm(c, hw, rows, &xd[s * in_per..(s + 1) * in_per], false, &dcols, true, T::zero(), &mut part);
            part
        });
        sum_ordered(partials, c * rows)
    });

    let db = need[2].then(|| channel_sums(dd, n, o, g.h * g.w));
    Ok([dx, dw, db])
}

fn sum_ordered<T: Real>(partials: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); len];
    for p in partials {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}

pub(crate) fn channel_sums<T: Real>(d: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c];
    for s in 0..n {
        for (ch, acc) in out.iter_mut().enumerate() {
            let base = (s * c + ch) * hw;
            *acc += d[base..base + hw].iter().copied().sum::<T>();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct six-loop convolution used as an oracle.
    fn conv_naive(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], s: usize, p: usize) -> Tensor<f64> {
        let (n, c, h, wd) = x.dims4("t").unwrap();
        let (o, _, kh, kw) = w.dims4("t").unwrap();
        let ho = (h + 2 * p - kh) / s + 1;
        let wo = (wd + 2 * p - kw) / s + 1;
        Tensor::from_fn(&[n, o, ho, wo], |idx| {
            let ox = idx % wo;
            let oy = (idx / wo) % ho;
            let oc = (idx / (wo * ho)) % o;
            let ns = idx / (wo * ho * o);
            let mut acc = b[oc];
            for ic in 0..c {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * s + ky) as isize - p as isize;
                        let ix = (ox * s + kx) as isize - p as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                            acc += x.data()[((ns * c + ic) * h + iy as usize) * wd + ix as usize]
                                * w.data()[((oc * c + ic) * kh + ky) * kw + kx];
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn matches_naive_convolution() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for &(s, p) in &[(1, 0), (1, 1), (2, 1), (2, 0)] {
            let x = Tensor::<f64>::randn(&[2, 3, 7, 6], 1.0, &mut rng);
            let w = Tensor::<f64>::randn(&[4, 3, 3, 3], 1.0, &mut rng);
            let b = Tensor::new(&[4], vec![0.1, -0.2, 0.3, 0.0]).unwrap();
            let fast = conv2d_forward(&x, &w, &b, s, p).unwrap();
            let slow = conv_naive(&x, &w, b.data(), s, p);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_mismatch_names_axes() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        let b = Tensor::<f32>::zeros(&[1]);
        let err = conv2d_forward(&x, &w, &b, 1, 0).unwrap_err().to_string();
        assert!(err.contains("axis 1"), "{err}");
    }

    #[test]
    fn empty_output_is_config_error() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        let w = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        let b = Tensor::<f32>::zeros(&[1]);
        assert!(matches!(conv2d_forward(&x, &w, &b, 1, 0), Err(Error::Config(_))));
        assert!(matches!(conv2d_forward(&x, &w, &b, 0, 1), Err(Error::Config(_))));
    }
}
