use std::fs;
use std::path::Path;

use retsynth::io::pnm;
use retsynth_cli::{run, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};

fn cli(args: &[&str]) -> i32 {
    let mut argv = vec!["retsynth"];
    argv.extend_from_slice(args);
    run(argv)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files_with_ext(dir: &Path, ext: &str) -> Vec<std::path::PathBuf> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    v.sort();
    v
}

const FAST: &str = "\
[classifier]
epochs = 2
batch_size = 8
lr_high = 0.001
[wgan]
steps = 2
n_critic = 1
batch_size = 4
latent_dim = 8
[ae]
steps = 3
batch_size = 4
levels = 2
";

#[test]
fn synth_data_writes_images_manifest_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    assert_eq!(cli(&["synth-data", "--kind", "drusen", "--n", "10", "--out", s(&d)]), EXIT_OK);
    assert_eq!(files_with_ext(&d, "ppm").len(), 10);
    let manifest = fs::read_to_string(d.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().filter(|l| l.contains(",drusen,CFP,,real")).count(), 10);
    let prov = fs::read_to_string(d.join("provenance.txt")).unwrap();
    assert!(prov.contains("command = synth-data"));
    assert!(prov.contains("manifest.csv sha256="));
    assert!(prov.contains("wgan.clip_c = 0.01  # default"));
}

#[test]
fn usage_and_runtime_exit_codes() {
    assert_eq!(cli(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(cli(&["synth-data", "--bogus", "1"]), EXIT_USAGE);
    assert_eq!(cli(&[]), EXIT_USAGE);
    assert_eq!(cli(&["--help"]), EXIT_OK);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(cli(&["verify", "--classifier", "/nonexistent.bin", "--images", "/nonexistent", "--true-class", "ga", "--out", s(&out)]), EXIT_RUNTIME);
    let cfg = dir.path().join("bad.ini");
    fs::write(&cfg, "[gan]\nstesp = 3\n").unwrap();
    assert_eq!(cli(&["synth-data", "--n", "1", "--config", s(&cfg), "--out", s(&out)]), EXIT_RUNTIME);
    assert_eq!(cli(&["synth-data", "--n", "1", "--size", "48", "--out", s(&out)]), EXIT_RUNTIME);
}

#[test]
fn seed_flag_changes_output_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let run_with = |seed: &str, name: &str| {
        let d = dir.path().join(name);
        assert_eq!(cli(&["synth-data", "--kind", "ga", "--n", "2", "--size", "32", "--seed", seed, "--out", s(&d)]), 0);
        fs::read(d.join("ga_0000.ppm")).unwrap()
    };
    let a = run_with("1", "a");
    assert_eq!(a, run_with("1", "b"));
    assert_ne!(a, run_with("2", "c"));
}

#[test]
fn full_pipeline_at_toy_scale() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("fast.ini");
    fs::write(&cfg, FAST).unwrap();
    let c = s(&cfg);
    let data = root.join("data");
    let split = root.join("split");
    let model = root.join("model");

    assert_eq!(cli(&["synth-data", "--n", "10", "--size", "32", "--modality", "FA", "--out", s(&data)]), EXIT_OK);
    assert_eq!(cli(&["split", "--manifest", s(&data), "--out", s(&split)]), EXIT_OK);
    let counts = fs::read_to_string(split.join("split_counts.csv")).unwrap();
    assert!(counts.contains("drusen,7,1,2"), "{counts}");

    assert_eq!(cli(&["train-classifier", "--images", s(&split), "--config", c, "--out", s(&model)]), EXIT_OK);
    let ck = model.join("classifier.bin");
    assert!(ck.is_file());
    assert_eq!(fs::read_to_string(model.join("classifier.bin.classes")).unwrap(), "healthy\ndrusen\nga\n");

    let v = root.join("verify");
    assert_eq!(cli(&["verify", "--classifier", s(&ck), "--images", s(&data), "--true-class", "drusen", "--out", s(&v)]), EXIT_OK);
    let table = fs::read_to_string(v.join("verification.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    let value: f64 = rows[0].split(',').nth(4).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&value));
    assert_eq!(cli(&["verify", "--classifier", s(&ck), "--images", s(&data), "--true-class", "amd", "--out", s(&v)]), EXIT_RUNTIME);

    let cam = root.join("cam");
    assert_eq!(cli(&["cam", "--classifier", s(&ck), "--images", s(&data.join("ga_0000.pgm")), "--class", "ga", "--out", s(&cam)]), EXIT_OK);
    assert_eq!(pnm::load_image::<f32>(&cam.join("cam_0000.pgm")).unwrap().shape(), &[1, 32, 32]);
    assert_eq!(pnm::load_image::<f32>(&cam.join("overlay_0000.ppm")).unwrap().shape(), &[3, 32, 32]);

    let rep = root.join("report");
    assert_eq!(cli(&["report", "--classifier", s(&ck), "--images", s(&data), "--top-n", "2", "--out", s(&rep)]), EXIT_OK);
    assert_eq!(fs::read_to_string(rep.join("relation.csv")).unwrap().lines().count(), 3);

    let gan = root.join("wgan");
    assert_eq!(cli(&["train-wgan", "--images", s(&data), "--class", "drusen", "--config", c, "--out", s(&gan)]), EXIT_OK);
    assert_eq!(fs::read_to_string(gan.join("wgan_metrics.csv")).unwrap().lines().count(), 3);
    let gen = root.join("gen");
    assert_eq!(cli(&["generate", "--ckpt", s(&gan.join("wgan.bin")), "--n", "4", "--label", "drusen", "--out", s(&gen)]), EXIT_OK);
    let samples = files_with_ext(&gen, "pgm");
    assert_eq!(samples.len(), 4);
    for p in &samples {
        let t = pnm::load_image::<f32>(p).unwrap();
        assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
    let gv = root.join("gen_verify");
    assert_eq!(cli(&["verify", "--classifier", s(&ck), "--images", s(&gen), "--true-class", "drusen", "--out", s(&gv)]), EXIT_OK);
    assert!(fs::read_to_string(gv.join("verification.csv")).unwrap().contains("\nwgan,drusen,drusen,4,"));

    let sw = |name: &str| {
        let out = root.join(name);
        let code = cli(&[
            "sweep", "--images", s(&data), "--classifier", s(&ck), "--true-class", "drusen", "--sizes", "4,8",
            "--samples", "4", "--config", c, "--out", s(&out),
        ]);
        assert_eq!(code, EXIT_OK);
        fs::read(out.join("sweep.csv")).unwrap()
    };
    let first = sw("sweep1");
    assert_eq!(first, sw("sweep2"));
    assert_eq!(String::from_utf8(first).unwrap().lines().count(), 3);

    let ae = root.join("ae");
    assert_eq!(cli(&["train-ae", "--images", s(&split), "--config", c, "--out", s(&ae)]), EXIT_OK);
    assert!(fs::read_to_string(ae.join("ae_summary.csv")).unwrap().starts_with("level,heldout_psnr_db\n1,"));
    let st = root.join("styled");
    let code = cli(&[
        "stylize", "--stack", s(&ae.join("stack.bin")), "--content", s(&data.join("healthy_0000.pgm")),
        "--style", s(&data.join("drusen_0000.pgm")), "--alpha", "0.5", "--out", s(&st),
    ]);
    assert_eq!(code, EXIT_OK);
    let rows = fs::read_to_string(st.join("stylized.csv")).unwrap();
    assert!(rows.lines().nth(1).unwrap().ends_with("styled_0000.pgm,0.5,2"));
    assert_eq!(cli(&["stylize", "--stack", s(&ae.join("stack.bin")), "--content", s(&data), "--style", s(&data.join("ga_0001.pgm")), "--pairing", "zip", "--out", s(&st)]), EXIT_RUNTIME);
}
