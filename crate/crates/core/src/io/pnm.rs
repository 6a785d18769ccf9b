//! Binary portable graymap (P5) and pixmap (P6) with maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const MAX_DIM: usize = 1024;

/// Decoded 8-bit image, interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    /// 1 for P5, 3 for P6.
    pub channels: usize,
    pub pixels: Vec<u8>,
}

fn fmt_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        offset,
        detail: detail.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(fmt_err(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fmt_err(start, format!("{what} out of range")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Pnm> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(fmt_err(0, "bad magic, expected P5 or P6")),
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let at = h.pos;
    if width == 0 || height == 0 || width > MAX_DIM || height > MAX_DIM {
        return Err(fmt_err(at, format!("dimensions {width}x{height} outside 1..={MAX_DIM}")));
    }
    let maxval_at = {
        h.skip_space_and_comments();
        h.pos
    };
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(fmt_err(maxval_at, format!("maxval {maxval} unsupported, expected 255")));
    }
    match bytes.get(h.pos) {
        Some(c) if c.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(fmt_err(h.pos, "expected single whitespace before payload")),
    }
    let need = width * height * channels;
    let have = bytes.len() - h.pos;
    if have < need {
        return Err(fmt_err(bytes.len(), format!("truncated payload: {have} of {need} bytes")));
    }
    if have > need {
        return Err(fmt_err(h.pos + need, format!("{} trailing bytes after payload", have - need)));
    }
    Ok(Pnm {
        width,
        height,
        channels,
        pixels: bytes[h.pos..].to_vec(),
    })
}

/// Canonical encoding: `P5|P6`, newline, `W H`, newline, `255`, newline.
pub fn encode(img: &Pnm) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// `v ↦ 2·v/255 − 1`, planar `C×H×W`.
pub fn to_tensor<T: Real>(img: &Pnm) -> Tensor<T> {
    let (c, h, w) = (img.channels, img.height, img.width);
    Tensor::from_fn(&[c, h, w], |i| {
        let (ch, p) = (i / (h * w), i % (h * w));
        T::from_f64(2.0 * img.pixels[p * c + ch] as f64 / 255.0 - 1.0)
    })
}

/// Inverse of [`to_tensor`] with round-half-up and clamping to `0..=255`.
pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Pnm> {
    let [c, h, w] = t.shape()[..] else {
        return Err(Error::dim("save_image", format!("expects C×H×W, got {:?}", t.shape())));
    };
    if c != 1 && c != 3 {
        return Err(Error::dim("save_image", format!("expects 1 or 3 channels, got {c}")));
    }
    if h > MAX_DIM || w > MAX_DIM {
        return Err(Error::Config(format!("image {w}x{h} exceeds {MAX_DIM}")));
    }
    let mut pixels = vec![0u8; c * h * w];
    for (i, v) in t.data().iter().enumerate() {
        let (ch, p) = (i / (h * w), i % (h * w));
        let x = v.to_f64();
        let q = if x.is_nan() { 0.0 } else { ((x + 1.0) * 127.5 + 0.5).floor() };
        pixels[p * c + ch] = q.clamp(0.0, 255.0) as u8;
    }
    Ok(Pnm {
        width: w,
        height: h,
        channels: c,
        pixels,
    })
}

pub fn load_image<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
        .map(|p| to_tensor(&p))
        .map_err(|e| match e {
            Error::Format { offset, detail } => Error::Format {
                offset,
                detail: format!("{}: {detail}", path.display()),
            },
            other => other,
        })
}

/// Writes P5 for one channel and P6 for three.
pub fn save_image<T: Real>(t: &Tensor<T>, path: &Path) -> Result<()> {
    let bytes = encode(&from_tensor(t)?);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Conventional extension for a channel count.
pub fn extension(channels: usize) -> &'static str {
    if channels == 1 {
        "pgm"
    } else {
        "ppm"
    }
}
