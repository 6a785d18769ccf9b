//! Procedural fundus-like images: a dark circular disk with vessels and an
//! optic disc, plus drusen dots or a geographic-atrophy patch.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    Healthy,
    Drusen,
    Ga,
}

impl Kind {
    pub const ALL: [Kind; 3] = [Kind::Healthy, Kind::Drusen, Kind::Ga];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Healthy => "healthy",
            Kind::Drusen => "drusen",
            Kind::Ga => "ga",
        }
    }

    /// Position in the default class vocabulary.
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Default class vocabulary, indexed by [`Kind::index`].
pub fn class_names() -> Vec<String> {
    Kind::ALL.iter().map(|k| k.name().to_string()).collect()
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Kind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown image kind `{s}` (healthy, drusen, ga)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    /// Colour fundus photograph, three channels.
    Cfp,
    /// Fluorescein angiogram, one channel.
    Fa,
}

impl Modality {
    pub fn channels(self) -> usize {
        match self {
            Modality::Cfp => 3,
            Modality::Fa => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Cfp => "CFP",
            Modality::Fa => "FA",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CFP" => Ok(Modality::Cfp),
            "FA" => Ok(Modality::Fa),
            _ => Err(Error::Config(format!("unknown modality `{s}` (CFP, FA)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Quadrant {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [Quadrant::TopLeft, Quadrant::TopRight, Quadrant::BottomLeft, Quadrant::BottomRight];

    /// Quadrant holding pixel `(y, x)` of an `h×w` grid.
    pub fn of(y: usize, x: usize, h: usize, w: usize) -> Quadrant {
        match (2 * y < h, 2 * x < w) {
            (true, true) => Quadrant::TopLeft,
            (true, false) => Quadrant::TopRight,
            (false, true) => Quadrant::BottomLeft,
            (false, false) => Quadrant::BottomRight,
        }
    }

    fn signs(self) -> (f64, f64) {
        match self {
            Quadrant::TopLeft => (-1.0, -1.0),
            Quadrant::TopRight => (-1.0, 1.0),
            Quadrant::BottomLeft => (1.0, -1.0),
            Quadrant::BottomRight => (1.0, 1.0),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SynthOptions {
    /// Confine the lesion (all drusen, or the atrophy patch) to one quadrant.
    pub quadrant: Option<Quadrant>,
}

pub const SIZES: [usize; 2] = [32, 64];

/// Fundus disk centre (both axes) and radius for an image side.
pub fn disk_geometry(size: usize) -> (f64, f64) {
    ((size as f64 - 1.0) / 2.0, 0.46 * size as f64)
}

pub fn in_disk(y: usize, x: usize, size: usize) -> bool {
    let (c, r) = disk_geometry(size);
    let (dy, dx) = (y as f64 - c, x as f64 - c);
    dy * dy + dx * dx <= r * r
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn image_seed(kind: Kind, seed: u64, index: usize) -> u64 {
    splitmix(seed ^ splitmix(((kind.index() as u64) << 40) ^ index as u64))
}

struct Canvas {
    size: usize,
    rgb: Vec<[f64; 3]>,
}

impl Canvas {
    fn blend(&mut self, y: usize, x: usize, color: [f64; 3], a: f64) {
        let p = &mut self.rgb[y * self.size + x];
        for c in 0..3 {
            p[c] = p[c] * (1.0 - a) + color[c] * a;
        }
    }

    fn scale(&mut self, y: usize, x: usize, f: [f64; 3]) {
        let p = &mut self.rgb[y * self.size + x];
        for c in 0..3 {
            p[c] *= f[c];
        }
    }

    /// Soft disc: full colour within `r`, linear falloff over one pixel.
    fn dot(&mut self, cy: f64, cx: f64, r: f64, color: [f64; 3]) {
        let lo_y = (cy - r - 1.0).floor().max(0.0) as usize;
        let hi_y = ((cy + r + 1.0).ceil() as usize).min(self.size - 1);
        let lo_x = (cx - r - 1.0).floor().max(0.0) as usize;
        let hi_x = ((cx + r + 1.0).ceil() as usize).min(self.size - 1);
        for y in lo_y..=hi_y {
            for x in lo_x..=hi_x {
                let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                let a = (r + 1.0 - d).clamp(0.0, 1.0);
                if a > 0.0 && in_disk(y, x, self.size) {
                    self.blend(y, x, color, a);
                }
            }
        }
    }
}

struct Palette {
    fundus: [f64; 3],
    disc: [f64; 3],
    vessel: [f64; 3],
    drusen: [f64; 3],
    ga: [f64; 3],
    ga_rim: [f64; 3],
}

fn palette(m: Modality) -> Palette {
    match m {
        Modality::Cfp => Palette {
            fundus: [0.55, 0.22, 0.10],
            disc: [0.85, 0.62, 0.35],
            vessel: [0.62, 0.45, 0.45],
            drusen: [1.0, 0.92, 0.5],
            ga: [0.80, 0.62, 0.45],
            ga_rim: [0.35, 0.18, 0.08],
        },
        Modality::Fa => Palette {
            fundus: [0.30; 3],
            disc: [0.55; 3],
            vessel: [1.5; 3],
            drusen: [0.95; 3],
            ga: [0.70; 3],
            ga_rim: [0.15; 3],
        },
    }
}

/// Renders one image as a `C×H×W` tensor in `[-1, 1]`, quantized to the
/// 8-bit grid so it equals its own saved-and-reloaded form.
pub fn render(kind: Kind, modality: Modality, size: usize, seed: u64, index: usize, opts: &SynthOptions) -> Result<Tensor<f32>> {
    if !SIZES.contains(&size) {
        return Err(Error::Config(format!("synthetic image size must be 32 or 64, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(image_seed(kind, seed, index));
    let pal = palette(modality);
    let s = size as f64;
    let (c, r_disk) = disk_geometry(size);
    let mut cv = Canvas {
        size,
        rgb: vec![[0.0; 3]; size * size],
    };

    // Fundus with vignetting and a per-image tint.
    let tint: f64 = rng.gen_range(0.9..1.1);
    for y in 0..size {
        for x in 0..size {
            if in_disk(y, x, size) {
                let d2 = ((y as f64 - c).powi(2) + (x as f64 - c).powi(2)) / (r_disk * r_disk);
                let v = tint * (1.0 - 0.35 * d2);
                cv.rgb[y * size + x] = pal.fundus.map(|f| f * v);
            }
        }
    }

    // Optic disc left or right of centre.
    let side = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
    let disc_r = 0.07 * s;
    let (disc_y, disc_x) = (c + rng.gen_range(-0.05..0.05) * s, c + side * 0.26 * s);
    cv.dot(disc_y, disc_x, disc_r, pal.disc);

    // Vessels: quadratic curves from the optic disc towards the rim.
    let half_width = 0.5f64.max(0.012 * s);
    for _ in 0..rng.gen_range(3..=5) {
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let (ey, ex) = (c + 0.9 * r_disk * angle.sin(), c + 0.9 * r_disk * angle.cos());
        let (my, mx) = (
            (disc_y + ey) / 2.0 + rng.gen_range(-0.15..0.15) * s,
            (disc_x + ex) / 2.0 + rng.gen_range(-0.15..0.15) * s,
        );
        let steps = 6 * size;
        let mut touched = vec![false; size * size];
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            let u = 1.0 - t;
            let py = u * u * disc_y + 2.0 * u * t * my + t * t * ey;
            let px = u * u * disc_x + 2.0 * u * t * mx + t * t * ex;
            let (yi, xi) = (py.round() as isize, px.round() as isize);
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (y, x) = (yi + dy, xi + dx);
                    if y < 0 || x < 0 || y >= size as isize || x >= size as isize {
                        continue;
                    }
                    let (y, x) = (y as usize, x as usize);
                    let d = ((y as f64 - py).powi(2) + (x as f64 - px).powi(2)).sqrt();
                    if d <= half_width && in_disk(y, x, size) && !touched[y * size + x] {
                        touched[y * size + x] = true;
                        cv.scale(y, x, pal.vessel);
                    }
                }
            }
        }
    }
    // FA vessels brighten; keep them below the lesion range.
    for p in cv.rgb.iter_mut() {
        for v in p.iter_mut() {
            *v = v.min(0.6);
        }
    }
    cv.dot(disc_y, disc_x, disc_r * 0.6, pal.disc);

    // Region lesions may occupy: inside the disk, clear of the optic disc
    // and, if requested, strictly within one quadrant.
    let fits = |y: f64, x: f64, r: f64| -> bool {
        let from_centre = ((y - c).powi(2) + (x - c).powi(2)).sqrt();
        let from_disc = ((y - disc_y).powi(2) + (x - disc_x).powi(2)).sqrt();
        let inside_quadrant = match opts.quadrant {
            None => true,
            Some(q) => {
                let (sy, sx) = q.signs();
                sy * (y - c) > r + 1.5 && sx * (x - c) > r + 1.5
            }
        };
        from_centre + r + 1.5 < 0.95 * r_disk && from_disc > disc_r + r + 2.5 && inside_quadrant
    };

    match kind {
        Kind::Healthy => {}
        Kind::Drusen => {
            // Small disks and single quadrants cannot hold 15 separated dots;
            // keep what fits once tries run out, down to a floor.
            let want = rng.gen_range(5..=15usize);
            let floor = if opts.quadrant.is_some() { 3 } else { 5 };
            let mut placed: Vec<(f64, f64, f64)> = Vec::new();
            let mut tries = 0;
            while placed.len() < want {
                tries += 1;
                if tries > 5_000 {
                    if placed.len() >= floor {
                        break;
                    }
                    return Err(Error::Degenerate {
                        op: "synth_corpus",
                        detail: format!("could not place {floor} separated drusen"),
                    });
                }
                let r = (rng.gen_range(0.022..0.035) * s).max(0.9);
                let y = rng.gen_range(0.0..s - 1.0).round() + rng.gen_range(-0.3..0.3);
                let x = rng.gen_range(0.0..s - 1.0).round() + rng.gen_range(-0.3..0.3);
                let separated = placed
                    .iter()
                    .all(|&(py, px, pr)| ((py - y).powi(2) + (px - x).powi(2)).sqrt() > r + pr + 3.0);
                if fits(y, x, r) && separated {
                    placed.push((y, x, r));
                }
            }
            for (y, x, r) in placed {
                cv.dot(y, x, r, pal.drusen);
            }
        }
        Kind::Ga => {
            let (mut ra, mut rb) = (rng.gen_range(0.09..0.13) * s, rng.gen_range(0.07..0.1) * s);
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            // A quadrant on the optic-disc side may not hold a full-size
            // patch; shrink in steps only after placement keeps failing.
            let mut tries = 0;
            let (cy, cx) = loop {
                tries += 1;
                if tries % 4000 == 0 && opts.quadrant.is_some() && ra > 0.5 * 0.09 * s {
                    ra *= 0.85;
                    rb *= 0.85;
                }
                if tries > 20_000 {
                    return Err(Error::Degenerate {
                        op: "synth_corpus",
                        detail: "could not place atrophy patch".into(),
                    });
                }
                let y = rng.gen_range(0.0..s - 1.0);
                let x = rng.gen_range(0.0..s - 1.0);
                if fits(y, x, ra) {
                    break (y, x);
                }
            };
            let (sin, cos) = theta.sin_cos();
            for y in 0..size {
                for x in 0..size {
                    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                    let (u, v) = (cos * dx + sin * dy, -sin * dx + cos * dy);
                    let e = ((u / ra).powi(2) + (v / rb).powi(2)).sqrt();
                    if e <= 1.0 {
                        cv.blend(y, x, pal.ga, 1.0);
                    } else if e <= 1.0 + 1.2 / rb {
                        cv.blend(y, x, pal.ga_rim, 0.8);
                    }
                }
            }
        }
    }

    let noise = Normal::new(0.0, 0.012).expect("valid normal");
    let ch = modality.channels();
    let mut out = vec![0.0f32; ch * size * size];
    for (p, px) in cv.rgb.iter().enumerate() {
        let (y, x) = (p / size, p % size);
        let inside = in_disk(y, x, size);
        let gray = if ch == 1 { Some(px[0]) } else { None };
        for k in 0..ch {
            let mut v = gray.unwrap_or(px[k]);
            if inside {
                v += noise.sample(&mut rng);
            }
            let q = (v.clamp(0.0, 1.0) * 255.0).round();
            out[k * size * size + p] = (2.0 * q / 255.0 - 1.0) as f32;
        }
    }
    Tensor::new(&[ch, size, size], out)
}

/// `n` images of one kind, indices `0..n`.
pub fn render_many(kind: Kind, modality: Modality, n: usize, size: usize, seed: u64, opts: &SynthOptions) -> Result<Vec<Tensor<f32>>> {
    if n == 0 {
        return Err(Error::Config("image count must be at least 1".into()));
    }
    par::map_range(n, |i| render(kind, modality, size, seed, i, opts)).into_iter().collect()
}
