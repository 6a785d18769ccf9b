use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{LabeledImages, Split};
use crate::error::{Error, Result};

use super::pnm;
use super::synth::{self, Kind, Modality, SynthOptions};

/// Where an image came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    Real,
    Wgan,
    StyleTransfer,
}

impl Provenance {
    pub const ALL: [Provenance; 3] = [Provenance::Real, Provenance::Wgan, Provenance::StyleTransfer];

    pub fn name(self) -> &'static str {
        match self {
            Provenance::Real => "real",
            Provenance::Wgan => "wgan",
            Provenance::StyleTransfer => "styletransfer",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Provenance {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Provenance::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown provenance `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub label: String,
    pub modality: Modality,
    pub split: Option<Split>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub classes: Vec<String>,
    pub split_seed: Option<u64>,
}

pub const MANIFEST_FILE: &str = "manifest.csv";
const HEADER: &str = "path,label,modality,split,provenance";

impl DatasetManifest {
    pub fn new(classes: Vec<String>) -> Self {
        DatasetManifest {
            entries: Vec::new(),
            classes,
            split_seed: None,
        }
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.classes.iter().position(|c| c == label).ok_or_else(|| Error::Lookup {
            kind: "class",
            name: label.to_string(),
        })
    }

    /// CSV text: two `#` metadata lines, a header and one row per entry.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# classes={}\n", self.classes.join(";"));
        if let Some(seed) = self.split_seed {
            s.push_str(&format!("# split_seed={seed}\n"));
        }
        s.push_str(HEADER);
        s.push('\n');
        for e in &self.entries {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e.path.display(),
                e.label,
                e.modality,
                e.split.map(|s| s.to_string()).unwrap_or_default(),
                e.provenance
            ));
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut classes: Option<Vec<String>> = None;
        let mut split_seed = None;
        let mut entries = Vec::new();
        let mut saw_header = false;
        for (n, line) in text.lines().enumerate() {
            let bad = |d: String| Error::Config(format!("manifest line {}: {d}", n + 1));
            if let Some(meta) = line.strip_prefix('#') {
                if let Some(v) = meta.trim().strip_prefix("classes=") {
                    classes = Some(v.split(';').filter(|c| !c.is_empty()).map(str::to_string).collect());
                } else if let Some(v) = meta.trim().strip_prefix("split_seed=") {
                    split_seed = Some(v.parse().map_err(|_| bad(format!("bad split seed `{v}`")))?);
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if !saw_header {
                if line.trim() != HEADER {
                    return Err(bad(format!("expected header `{HEADER}`")));
                }
                saw_header = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(format!("expected 5 fields, found {}", f.len())));
            }
            entries.push(ManifestEntry {
                path: PathBuf::from(f[0]),
                label: f[1].to_string(),
                modality: f[2].parse()?,
                split: if f[3].is_empty() { None } else { Some(f[3].parse()?) },
                provenance: f[4].parse()?,
            });
        }
        let classes = match classes {
            Some(c) => c,
            None => {
                let mut c: Vec<String> = entries.iter().map(|e| e.label.clone()).collect();
                c.sort();
                c.dedup();
                c
            }
        };
        let m = DatasetManifest {
            entries,
            classes,
            split_seed,
        };
        for e in &m.entries {
            m.label_index(&e.label)?;
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.to_csv()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Reads `dir/manifest.csv`, or the given file if `path` is a file.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        Self::parse_csv(&text)
    }

    /// Decodes every entry. All paths must exist and decode with a common
    /// shape; entries without a split are assigned `Train`.
    pub fn load_images(&self, base: &Path) -> Result<LabeledImages<f32>> {
        let mut data = LabeledImages::new(self.classes.clone());
        for e in &self.entries {
            let p = if e.path.is_absolute() { e.path.clone() } else { base.join(&e.path) };
            let img = pnm::load_image::<f32>(&p)?;
            data.push(img, self.label_index(&e.label)?, e.split.unwrap_or(Split::Train))?;
        }
        Ok(data)
    }

    pub fn count(&self, label: &str, split: Split) -> usize {
        self.entries.iter().filter(|e| e.label == label && e.split == Some(split)).count()
    }
}

/// Per-class item counts for `(train, val, test)` given ratios.
fn split_counts(n: usize, ratios: (f64, f64, f64)) -> (usize, usize) {
    let train = (ratios.0 * n as f64).round() as usize;
    let val = ((ratios.1 * n as f64).round() as usize).min(n - train.min(n));
    (train.min(n), val)
}

fn check_ratios(r: (f64, f64, f64)) -> Result<()> {
    if [r.0, r.1, r.2].iter().any(|v| !(0.0..=1.0).contains(v)) || (r.0 + r.1 + r.2 - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {r:?} must be non-negative and sum to 1")));
    }
    Ok(())
}

/// Stratified split: each class is shuffled with the seed and cut by the
/// ratios. If any class has fewer than 3 items, all items are split together
/// instead and `fell_back` is set.
pub fn stratified_split(labels: &[usize], ratios: (f64, f64, f64), seed: u64) -> Result<(Vec<Split>, bool)> {
    check_ratios(ratios)?;
    let mut out = vec![Split::Train; labels.len()];
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let groups: Vec<Vec<usize>> = (0..n_classes)
        .map(|c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
        .filter(|g: &Vec<usize>| !g.is_empty())
        .collect();
    let fell_back = groups.iter().any(|g| g.len() < 3);
    let groups = if fell_back {
        log::warn!("a class has fewer than 3 items; using an unstratified split");
        vec![(0..labels.len()).collect()]
    } else {
        groups
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for mut g in groups {
        g.shuffle(&mut rng);
        let (tr, va) = split_counts(g.len(), ratios);
        for (k, &i) in g.iter().enumerate() {
            out[i] = if k < tr {
                Split::Train
            } else if k < tr + va {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok((out, fell_back))
}

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.7, 0.1, 0.2);

pub fn split_dataset(manifest: &DatasetManifest, ratios: (f64, f64, f64), seed: u64) -> Result<DatasetManifest> {
    let labels = manifest
        .entries
        .iter()
        .map(|e| manifest.label_index(&e.label))
        .collect::<Result<Vec<_>>>()?;
    let (splits, _) = stratified_split(&labels, ratios, seed)?;
    let mut out = manifest.clone();
    for (e, s) in out.entries.iter_mut().zip(splits) {
        e.split = Some(s);
    }
    out.split_seed = Some(seed);
    Ok(out)
}

/// Renders `n` images of one kind into `dir` and returns their manifest.
pub fn synth_corpus(
    kind: Kind,
    modality: Modality,
    n: usize,
    size: usize,
    seed: u64,
    dir: &Path,
    opts: &SynthOptions,
) -> Result<DatasetManifest> {
    let images = synth::render_many(kind, modality, n, size, seed, opts)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut m = DatasetManifest::new(synth::class_names());
    for (i, img) in images.iter().enumerate() {
        let name = PathBuf::from(format!("{}_{i:04}.{}", kind.name(), pnm::extension(modality.channels())));
        pnm::save_image(img, &dir.join(&name))?;
        m.entries.push(ManifestEntry {
            path: name,
            label: kind.name().to_string(),
            modality,
            split: None,
            provenance: Provenance::Real,
        });
    }
    Ok(m)
}

/// In-memory corpus with `n_per_class` images of every kind, split with the
/// given ratios.
pub fn synth_dataset(
    modality: Modality,
    n_per_class: usize,
    size: usize,
    seed: u64,
    ratios: (f64, f64, f64),
) -> Result<LabeledImages<f32>> {
    let mut data = LabeledImages::new(synth::class_names());
    for kind in Kind::ALL {
        for img in synth::render_many(kind, modality, n_per_class, size, seed, &SynthOptions::default())? {
            data.push(img, kind.index(), Split::Train)?;
        }
    }
    let (splits, _) = stratified_split(&data.labels, ratios, seed)?;
    data.splits = splits;
    Ok(data)
}
