use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;

use retsynth::data::Split;
use retsynth::io::checkpoint::{read_checkpoint, save_checkpoint, Counters};
use retsynth::io::pnm;
use retsynth::io::synth::{self, Kind, Modality, Quadrant, SynthOptions};
use retsynth::io::{
    split_dataset, synth_corpus, write_csv, write_provenance, DatasetManifest, ManifestEntry, Provenance, RunConfig,
};
use retsynth::nn::{build_classifier, build_dcgan_generator, build_discriminator, Head, Network};
use retsynth::style::{batch_stylize, train_stack, write_stylized, Named, Pairing, StylizerStack};
use retsynth::train::{
    accuracy, generate_images, train_classifier as fit_classifier, train_gan as fit_gan, train_wgan as fit_wgan,
    AutoencoderConfig, ClassifierConfig, GanConfig, TrainReport, WganConfig,
};
use retsynth::verify::{
    compute_cam, image_probabilities, relation_csv, relation_report, sample_size_sweep, sweep_csv, verify_images,
    VerificationTable,
};
use retsynth::{Error, Result, Tensor};

use crate::Common;

/// Resolved config, seed and output directory of one run.
struct Ctx {
    cfg: RunConfig,
    seed: u64,
    out: PathBuf,
}

impl Ctx {
    fn new(c: &Common) -> Result<Self> {
        let mut cfg = match &c.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = c.seed {
            cfg.set("run.seed", &s.to_string())?;
        }
        let seed = cfg.get("run.seed")?;
        fs::create_dir_all(&c.out).map_err(|e| Error::io(&c.out, e))?;
        Ok(Ctx {
            cfg,
            seed,
            out: c.out.clone(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn finish(&self, command: &str, artifacts: &[PathBuf]) -> Result<()> {
        let refs: Vec<&Path> = artifacts.iter().map(PathBuf::as_path).collect();
        write_provenance(&self.out, command, self.seed, &self.cfg, &refs)?;
        for a in artifacts {
            println!("{}", a.display());
        }
        Ok(())
    }
}

fn report_csv(path: &Path, r: &TrainReport) -> Result<()> {
    fs::write(path, r.to_csv()).map_err(|e| Error::io(path, e))
}

/// Images named by a manifest (a `.csv` file or a directory holding
/// `manifest.csv`), a directory of `.ppm`/`.pgm` files, or one image file.
struct ImageSet {
    ids: Vec<String>,
    images: Vec<Tensor<f32>>,
    labels: Vec<String>,
    splits: Vec<Option<Split>>,
    provenance: Vec<Provenance>,
    classes: Vec<String>,
}

impl ImageSet {
    fn load(path: &Path) -> Result<Self> {
        let manifest = if path.is_dir() && path.join("manifest.csv").is_file() {
            Some((DatasetManifest::load(path)?, path.to_path_buf()))
        } else if path.extension().is_some_and(|e| e == "csv") {
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            Some((DatasetManifest::load(path)?, base))
        } else {
            None
        };
        if let Some((m, base)) = manifest {
            let data = m.load_images(&base)?;
            return Ok(ImageSet {
                ids: m.entries.iter().map(|e| base.join(&e.path).display().to_string()).collect(),
                images: data.images,
                labels: m.entries.iter().map(|e| e.label.clone()).collect(),
                splits: m.entries.iter().map(|e| e.split).collect(),
                provenance: m.entries.iter().map(|e| e.provenance).collect(),
                classes: m.classes,
            });
        }
        let files = if path.is_dir() {
            let mut f: Vec<PathBuf> = fs::read_dir(path)
                .map_err(|e| Error::io(path, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "ppm" || e == "pgm"))
                .collect();
            f.sort();
            f
        } else {
            vec![path.to_path_buf()]
        };
        if files.is_empty() {
            return Err(Error::Config(format!("no .ppm/.pgm images in {}", path.display())));
        }
        let images = files.iter().map(|f| pnm::load_image(f)).collect::<Result<Vec<_>>>()?;
        let n = images.len();
        Ok(ImageSet {
            ids: files.iter().map(|f| f.display().to_string()).collect(),
            images,
            labels: vec![String::new(); n],
            splits: vec![None; n],
            provenance: vec![Provenance::Real; n],
            classes: Vec::new(),
        })
    }

    fn filter_label(self, label: Option<&str>) -> Result<Self> {
        let Some(label) = label else { return Ok(self) };
        let keep: Vec<usize> = (0..self.images.len()).filter(|&i| self.labels[i] == label).collect();
        if keep.is_empty() {
            return Err(Error::Label(format!("no images labelled `{label}`")));
        }
        let pick = |v: &[String]| keep.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        Ok(ImageSet {
            ids: pick(&self.ids),
            labels: pick(&self.labels),
            images: keep.iter().map(|&i| self.images[i].clone()).collect(),
            splits: keep.iter().map(|&i| self.splits[i]).collect(),
            provenance: keep.iter().map(|&i| self.provenance[i]).collect(),
            classes: self.classes,
        })
    }

    fn geometry(&self) -> Result<(usize, usize)> {
        match self.images[0].shape() {
            [c, h, w] if h == w => Ok((*c, *h)),
            s => Err(Error::Config(format!("expected square C×H×W images, got {s:?}"))),
        }
    }
}

fn load_network(path: &Path, role: &str) -> Result<Network<f32>> {
    read_checkpoint(path)?.network(role)?.rebuild()
}

fn classes_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".classes");
    PathBuf::from(s)
}

/// The classifier and its class names: from the `.classes` sidecar when
/// present, else the synthetic vocabulary when the output count matches.
fn load_classifier(path: &Path) -> Result<(Network<f32>, Vec<String>)> {
    let net = load_network(path, "classifier")?;
    let n = match net.kind() {
        retsynth::nn::NetKind::Classifier { classes, .. } => *classes,
        k => return Err(Error::Checkpoint(format!("`{k}` is not a classifier"))),
    };
    let side = classes_path(path);
    let names = if side.is_file() {
        fs::read_to_string(&side)
            .map_err(|e| Error::io(&side, e))?
            .lines()
            .map(str::to_string)
            .collect()
    } else if n == synth::class_names().len() {
        synth::class_names()
    } else {
        (0..n).map(|i| format!("class{i}")).collect()
    };
    if names.len() != n {
        return Err(Error::Checkpoint(format!("{} lists {} classes, network has {n}", side.display(), names.len())));
    }
    Ok((net, names))
}

fn parse_quadrant(s: &str) -> std::result::Result<Quadrant, String> {
    match s {
        "tl" => Ok(Quadrant::TopLeft),
        "tr" => Ok(Quadrant::TopRight),
        "bl" => Ok(Quadrant::BottomLeft),
        "br" => Ok(Quadrant::BottomRight),
        _ => Err(format!("unknown quadrant `{s}` (tl, tr, bl, br)")),
    }
}

#[derive(Debug, Args)]
pub struct SynthData {
    #[command(flatten)]
    common: Common,
    /// healthy, drusen, ga or all.
    #[arg(long, default_value = "all")]
    kind: String,
    /// CFP or FA; defaults to `data.modality`.
    #[arg(long)]
    modality: Option<String>,
    /// Images per kind; defaults to `data.n_per_class`.
    #[arg(long)]
    n: Option<usize>,
    /// 32 or 64; defaults to `data.img_size`.
    #[arg(long)]
    size: Option<usize>,
    /// Confine lesions to one quadrant: tl, tr, bl or br.
    #[arg(long, value_parser = parse_quadrant)]
    quadrant: Option<Quadrant>,
}

pub fn synth_data(a: SynthData) -> Result<()> {
    let ctx = Ctx::new(&a.common)?;
    let modality: Modality = match &a.modality {
        Some(m) => m.parse()?,
        None => ctx.cfg.get("data.modality")?,
    };
    let n = a.n.map_or_else(|| ctx.cfg.get("data.n_per_class"), Ok)?;
    let size = a.size.map_or_else(|| ctx.cfg.get("data.img_size"), Ok)?;
    let kinds: Vec<Kind> = if a.kind == "all" { Kind::ALL.to_vec() } else { vec![a.kind.parse()?] };
    let opts = SynthOptions { quadrant: a.quadrant };
    let mut manifest = DatasetManifest::new(synth::class_names());
    for kind in kinds {
        manifest.entries.extend(synth_corpus(kind, modality, n, size, ctx.seed, &ctx.out, &opts)?.entries);
    }
    let path = manifest.save(&ctx.out)?;
    ctx.finish("synth-data", &[path])
}

#[derive(Debug, Args)]
pub struct SplitCmd {
    #[command(flatten)]
    common: Common,
    /// Manifest file or directory containing `manifest.csv`.
    #[arg(long)]
    manifest: PathBuf,
    /// train,val,test fractions; defaults to `data.ratios`.
    #[arg(long)]
    ratios: Option<String>,
}

pub fn split(a: SplitCmd) -> Result<()> {
    let mut ctx = Ctx::new(&a.common)?;
    if let Some(r) = &a.ratios {
        ctx.cfg.set("data.ratios", r)?;
    }
    let file = if a.manifest.is_dir() { a.manifest.join("manifest.csv") } else { a.manifest.clone() };
    let base = file.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut m = DatasetManifest::load(&file)?;
    let same_dir = fs::canonicalize(&base).ok() == fs::canonicalize(&ctx.out).ok();
    if !same_dir {
        let abs_base = std::path::absolute(&base).map_err(|e| Error::io(&base, e))?;
        for e in &mut m.entries {
            if e.path.is_relative() {
                e.path = abs_base.join(&e.path);
            }
        }
    }
    let split = split_dataset(&m, ctx.cfg.ratios()?, ctx.seed)?;
    let path = split.save(&ctx.out)?;
    let rows: Vec<Vec<String>> = split
        .classes
        .iter()
        .map(|c| {
            let mut r = vec![c.clone()];
            r.extend([Split::Train, Split::Val, Split::Test].map(|s| split.count(c, s).to_string()));
            r
        })
        .collect();
    let counts = ctx.path("split_counts.csv");
    write_csv(&counts, &["class", "train", "val", "test"], &rows)?;
    ctx.finish("split", &[path, counts])
}

#[derive(Debug, Args)]
pub struct TrainAe {
    #[command(flatten)]
    common: Common,
    /// Training images (manifest, directory or file). Items in the val or
    /// test split are held out for the PSNR report.
    #[arg(long)]
    images: PathBuf,
    /// Deepest level to train; defaults to `ae.levels`.
    #[arg(long)]
    levels: Option<usize>,
}

pub fn train_ae(a: TrainAe) -> Result<()> {
    let ctx = Ctx::new(&a.common)?;
    let set = ImageSet::load(&a.images)?;
    let levels = a.levels.map_or_else(|| ctx.cfg.get("ae.levels"), Ok)?;
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for (img, s) in set.images.into_iter().zip(&set.splits) {
        match s {
            Some(Split::Val) | Some(Split::Test) => held.push(img),
            _ => train.push(img),
        }
    }
    let cfg = AutoencoderConfig {
        steps: ctx.cfg.get("ae.steps")?,
        lr: ctx.cfg.get("ae.lr")?,
        batch_size: ctx.cfg.get("ae.batch_size")?,
        seed: ctx.seed,
    };
    let (stack, reports) = train_stack(&train, &held, levels, &cfg)?;
    let mut artifacts = Vec::new();
    let mut summary = Vec::new();
    for (k, r) in reports.iter().enumerate() {
        let p = ctx.path(&format!("ae_level{}.csv", k + 1));
        report_csv(&p, r)?;
        artifacts.push(p);
        summary.push(vec![
            (k + 1).to_string(),
            r.heldout_psnr.map(|v| format!("{v:.4}")).unwrap_or_default(),
        ]);
    }
    let sp = ctx.path("ae_summary.csv");
    write_csv(&sp, &["level", "heldout_psnr_db"], &summary)?;
    let ck = ctx.path("stack.bin");
    let roles = stack.roles();
    let refs: Vec<(&str, &Network<f32>)> = roles.iter().map(|(r, n)| (r.as_str(), *n)).collect();
    let counters = Counters {
        seed: ctx.seed,
        step: cfg.steps as u64,
        epoch: 0,
    };
    save_checkpoint(&ck, &refs, counters)?;
    artifacts.extend([sp, ck]);
    ctx.finish("train-ae", &artifacts)
}

fn load_stack(path: &Path, max_levels: usize, alpha: f64) -> Result<StylizerStack<f32>> {
    let ck = read_checkpoint(path)?;
    let (mut enc, mut dec) = (Vec::new(), Vec::new());
    for k in 1..=max_levels {
        let (Ok(e), Ok(d)) = (ck.network(&format!("encoder{k}")), ck.network(&format!("decoder{k}"))) else {
            break;
        };
        enc.push(e.rebuild()?);
        dec.push(d.rebuild()?);
    }
    StylizerStack::new(enc, dec, alpha)
}

#[derive(Debug, Args)]
pub struct TrainGan {
    #[command(flatten)]
    common: Common,
    /// Training images (manifest, directory or file).
    #[arg(long)]
    images: PathBuf,
    /// Train only on images with this manifest label.
    #[arg(long)]
    class: Option<String>,
}

pub fn train_gan(a: TrainGan, wasserstein: bool) -> Result<()> {
    let ctx = Ctx::new(&a.common)?;
    let set = ImageSet::load(&a.images)?.filter_label(a.class.as_deref())?;
    let (ch, size) = set.geometry()?;
    let sec = if wasserstein { "wgan" } else { "gan" };
    let latent: usize = ctx.cfg.get(&format!("{sec}.latent_dim"))?;
    let base: usize = ctx.cfg.get(&format!("{sec}.base_ch"))?;
    let mut gen = build_dcgan_generator(latent, size, ch, base, ctx.seed)?;
    let head = if wasserstein { Head::Linear } else { Head::Sigmoid };
    let mut disc = build_discriminator(size, ch, base, head, ctx.seed.wrapping_add(1))?;
    let (report, steps) = if wasserstein {
        let cfg = WganConfig {
            clip_c: ctx.cfg.get("wgan.clip_c")?,
            n_critic: ctx.cfg.get("wgan.n_critic")?,
            lr: ctx.cfg.get("wgan.lr")?,
            batch_size: ctx.cfg.get("wgan.batch_size")?,
            latent_dim: latent,
            steps: ctx.cfg.get("wgan.steps")?,
            seed: ctx.seed,
        };
        (fit_wgan(&mut gen, &mut disc, &set.images, &cfg)?, cfg.steps)
    } else {
        let cfg = GanConfig {
            batch_size: ctx.cfg.get("gan.batch_size")?,
            latent_dim: latent,
            lr_g: ctx.cfg.get("gan.lr_g")?,
            lr_d: ctx.cfg.get("gan.lr_d")?,
            steps: ctx.cfg.get("gan.steps")?,
            seed: ctx.seed,
            saturating: ctx.cfg.get("gan.saturating")?,
            ..GanConfig::default()
        };
        (fit_gan(&mut gen, &mut disc, &set.images, &cfg)?, cfg.steps)
    };
    let metrics = ctx.path(&format!("{sec}_metrics.csv"));
    report_csv(&metrics, &report)?;
    let ck = ctx.path(&format!("{sec}.bin"));
    let role = if wasserstein { "critic" } else { "discriminator" };
    let counters = Counters {
        seed: ctx.seed,
        step: steps as u64,
        epoch: 0,
    };
    save_checkpoint(&ck, &[("generator", &gen), (role, &disc)], counters)?;
    ctx.finish(if wasserstein { "train-wgan" } else { "train-gan" }, &[metrics, ck])
}

#[derive(Debug, Args)]
pub struct TrainClassifier {
    #[command(flatten)]
    common: Common,
    /// Labelled images: a manifest (split with `run.seed` if unsplit).
    #[arg(long)]
    images: PathBuf,
}

pub fn train_classifier(a: TrainClassifier) -> Result<()> {
    let ctx = Ctx::new(&a.common)?;
    let file = if a.images.is_dir() { a.images.join("manifest.csv") } else { a.images.clone() };
    let base = file.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut m = DatasetManifest::load(&file)?;
    if m.entries.iter().any(|e| e.split.is_none()) {
        m = split_dataset(&m, ctx.cfg.ratios()?, ctx.seed)?;
    }
    let data = m.load_images(&base)?;
    let (ch, size) = match data.images.first().map(|t| t.shape()) {
        Some([c, h, w]) if h == w => (*c, *h),
        _ => return Err(Error::Config("classifier needs square C×H×W images".into())),
    };
    let mut net = build_classifier(data.classes.len(), size, ch, ctx.cfg.get("classifier.base_ch")?, ctx.seed)?;
    let cfg = ClassifierConfig {
        epochs: ctx.cfg.get("classifier.epochs")?,
        batch_size: ctx.cfg.get("classifier.batch_size")?,
        lr_high: ctx.cfg.get("classifier.lr_high")?,
        lr_low: ctx.cfg.get("classifier.lr_low")?,
        augment_prob: ctx.cfg.get("classifier.augment_prob")?,
        seed: ctx.seed,
        ..ClassifierConfig::default()
    };
    let report = fit_classifier(&mut net, &data, &cfg)?;
    let metrics = ctx.path("classifier_metrics.csv");
    report_csv(&metrics, &report)?;
    let test = data.indices(Split::Test);
    let test_acc = if test.is_empty() { None } else { Some(accuracy(&net, &data, &test)?) };
    let summary = ctx.path("classifier_summary.csv");
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    write_csv(
        &summary,
        &["best_epoch", "best_val_accuracy", "test_accuracy"],
        &[vec![
            report.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
            fmt(report.best_val_accuracy),
            fmt(test_acc),
        ]],
    )?;
    let ck = ctx.path("classifier.bin");
    let counters = Counters {
        seed: ctx.seed,
        step: 0,
        epoch: cfg.epochs as u64,
    };
    save_checkpoint(&ck, &[("classifier", &net)], counters)?;
    let side = classes_path(&ck);
    fs::write(&side, data.classes.join("\n") + "\n").map_err(|e| Error::io(&side, e))?;
    ctx.finish("train-classifier", &[metrics, summary, ck, side])
}

#[derive(Debug, Args)]
pub struct Generate {
    #[command(flatten)]
    common: Common,
    /// Checkpoint holding a `generator` network.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 4)]
    n: usize,
    /// Manifest label for the samples.
    #[arg(long, default_value = "generated")]
    label: String,
}

pub fn generate(a: Generate) -> Result<()> {
    let ctx = Ctx::new(&a.common)?;
    if a.n == 0 {
        return Err(Error::Config("--n must be at least 1".into()));
    }
    let gen = load_network(&a.ckpt, "generator")?;
    let images = generate_images(&gen, a.n, ctx.seed)?;
    let classes = if synth::class_names().contains(&a.label) { synth::class_names() } else { vec![a.label.clone()] };
    let mut m = DatasetManifest::new(classes);
    for (i, img) in images.iter().enumerate() {
        let c = img.shape()[0];
        let name = PathBuf::from(format!("sample_{i:04}.{}", pnm::extension(c)));
        pnm::save_image(img, &ctx.out.join(&name))?;
        m.entries.push(ManifestEntry {
            path: name,
            label: a.label.clone(),
            modality: if c == 1 { Modality::Fa } else { Modality::Cfp },
            split: None,
            provenance: Provenance::Wgan,
        });
    }
    let path = m.save(&ctx.out)?;
    ctx.finish("generate", &[path])
}

#[derive(Debug, Args)]
pub struct Stylize {
    #[command(flatten)]
    common: Common,
    /// Checkpoint written by `train-ae`.
    #[arg(long)]
    stack: PathBuf,
    /// Content images (manifest, directory or file).
    #[arg(long)]
    content: PathBuf,
    /// Style images (manifest, directory or file).
    #[arg(long)]
    style: PathBuf,
    /// all_pairs or zip.
    #[arg(long, default_value = "all_pairs")]
    pairing: String,
    /// Defaults to `style.alpha`.
    #[arg(long)]
    alpha: Option<f64>,
}

pub fn stylize(a: Stylize) -> Result<()> {
    let ctx = Ctx::new(&a.common)?;
    let pairing: Pairing = a.pairing.parse()?;
    let alpha = a.alpha.map_or_else(|| ctx.cfg.get("style.alpha"), Ok)?;
    let mut stack = load_stack(&a.stack, ctx.cfg.get("style.levels")?, alpha)?;
    stack.eps_reg = ctx.cfg.get("style.eps_reg")?;
    stack.eig_floor = ctx.cfg.get("style.eig_floor")?;
    let named = |s: ImageSet| -> Vec<Named<f32>> {
        s.ids.into_iter().zip(s.images).map(|(id, image)| Named { id, image }).collect()
    };
    let contents = named(ImageSet::load(&a.content)?);
    let styles = named(ImageSet::load(&a.style)?);
    let results = batch_stylize(&contents, &styles, pairing, &stack)?;
    write_stylized(&ctx.out, &results, stack.levels())?;
    ctx.finish("stylize", &[ctx.path(retsynth::style::STYLE_MANIFEST_FILE)])
}

#[derive(Debug, Args)]
pub struct Verify {
    #[command(flatten)]
    common: Common,
    /// Checkpoint written by `train-classifier`.
    #[arg(long)]
    classifier: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    true_class: String,
    /// Row source; defaults to the manifest provenance, else `real`.
    #[arg(long)]
    source: Option<String>,
    /// Row group name, e.g. `drusen-CFP`; defaults to the true class.
    #[arg(long)]
    group: Option<String>,
}

pub fn verify(a: Verify) -> Result<()> {
    let ctx = Ctx::new(&a.common)?;
    let (net, classes) = load_classifier(&a.classifier)?;
    let set = ImageSet::load(&a.images)?;
    let source = match &a.source {
        Some(s) => s.parse()?,
        None => set.provenance[0],
    };
    let group = a.group.unwrap_or_else(|| a.true_class.clone());
    let row = verify_images(&net, &set.images, &classes, &a.true_class, source, &group)?;
    let path = ctx.path("verification.csv");
    let csv = VerificationTable { rows: vec![row] }.to_csv();
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    ctx.finish("verify", &[path])
}

#[derive(Debug, Args)]
pub struct Cam {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    classifier: PathBuf,
    #[arg(long)]
    images: PathBuf,
    /// Class to explain; defaults to each image's predicted class.
    #[arg(long)]
    class: Option<String>,
}

pub fn cam(a: Cam) -> Result<()> {
    let ctx = Ctx::new(&a.common)?;
    let (net, classes) = load_classifier(&a.classifier)?;
    let set = ImageSet::load(&a.images)?;
    let fixed = match &a.class {
        Some(c) => Some(
            classes
                .iter()
                .position(|x| x == c)
                .ok_or_else(|| Error::Label(format!("class `{c}` unknown to the classifier")))?,
        ),
        None => None,
    };
    let probs = image_probabilities(&net, &set.images)?;
    let mut rows = Vec::new();
    let mut artifacts = Vec::new();
    for (i, img) in set.images.iter().enumerate() {
        let class = fixed.unwrap_or_else(|| {
            let p = &probs[i];
            (0..p.len()).fold(0, |b, k| if p[k] > p[b] { k } else { b })
        });
        let map = compute_cam(&net, img, class, &set.ids[i])?;
        let cam_path = ctx.path(&format!("cam_{i:04}.pgm"));
        pnm::save_image(&map.to_image(), &cam_path)?;
        pnm::save_image(&map.overlay(img)?, &ctx.path(&format!("overlay_{i:04}.ppm")))?;
        let (y, x) = map.argmax();
        rows.push(vec![
            set.ids[i].clone(),
            classes[class].clone(),
            format!("{:.6}", probs[i][class]),
            y.to_string(),
            x.to_string(),
        ]);
        artifacts.push(cam_path);
    }
    let csv = ctx.path("cams.csv");
    write_csv(&csv, &["image", "class", "probability", "argmax_y", "argmax_x"], &rows)?;
    artifacts.insert(0, csv);
    ctx.finish("cam", &artifacts)
}

#[derive(Debug, Args)]
pub struct Sweep {
    #[command(flatten)]
    common: Common,
    /// Corpus to subsample (filtered to the true class when labelled).
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    classifier: PathBuf,
    #[arg(long)]
    true_class: String,
    /// Comma-separated sizes; defaults to `sweep.sizes`.
    #[arg(long)]
    sizes: Option<String>,
    /// Generated samples verified per size.
    #[arg(long, default_value_t = 64)]
    samples: usize,
}

pub fn sweep(a: Sweep) -> Result<()> {
    let mut ctx = Ctx::new(&a.common)?;
    if let Some(s) = &a.sizes {
        ctx.cfg.set("sweep.sizes", s)?;
    }
    let sizes: Vec<usize> = ctx.cfg.get_list("sweep.sizes")?;
    let (net, classes) = load_classifier(&a.classifier)?;
    let set = ImageSet::load(&a.images)?;
    let labelled = set.labels.iter().any(|l| !l.is_empty());
    let set = set.filter_label(labelled.then_some(a.true_class.as_str()))?;
    let (ch, size) = set.geometry()?;
    let base: usize = ctx.cfg.get("wgan.base_ch")?;
    let cfg = WganConfig {
        clip_c: ctx.cfg.get("wgan.clip_c")?,
        n_critic: ctx.cfg.get("wgan.n_critic")?,
        lr: ctx.cfg.get("wgan.lr")?,
        batch_size: ctx.cfg.get("wgan.batch_size")?,
        latent_dim: ctx.cfg.get("wgan.latent_dim")?,
        steps: ctx.cfg.get("wgan.steps")?,
        seed: ctx.seed,
    };
    let mut train = |imgs: &[Tensor<f32>], seed: u64| -> Result<Network<f32>> {
        let mut g = build_dcgan_generator(cfg.latent_dim, size, ch, base, seed)?;
        let mut c = build_discriminator(size, ch, base, Head::Linear, seed.wrapping_add(1))?;
        fit_wgan(&mut g, &mut c, imgs, &WganConfig { seed, ..cfg.clone() })?;
        Ok(g)
    };
    let rows = sample_size_sweep(&sizes, &set.images, &mut train, &net, &classes, &a.true_class, a.samples, ctx.seed)?;
    let path = ctx.path("sweep.csv");
    fs::write(&path, sweep_csv(&rows)).map_err(|e| Error::io(&path, e))?;
    ctx.finish("sweep", &[path])
}

#[derive(Debug, Args)]
pub struct Report {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    classifier: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long, default_value_t = 5)]
    top_n: usize,
}

pub fn report(a: Report) -> Result<()> {
    let ctx = Ctx::new(&a.common)?;
    let (net, classes) = load_classifier(&a.classifier)?;
    let set = ImageSet::load(&a.images)?;
    let ranked = relation_report(&net, &set.images, &classes, a.top_n)?;
    let path = ctx.path("relation.csv");
    fs::write(&path, relation_csv(&ranked)).map_err(|e| Error::io(&path, e))?;
    ctx.finish("report", &[path])
}
