//! Command-line surface of the pipeline. [`run`] parses arguments, runs one
//! command and maps the outcome to an exit code: 0 on success, 1 for usage
//! errors, 2 for runtime failures.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "retsynth", version, about = "Synthesize and verify retinal symptom images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags every command accepts, flattened into each subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// INI-style config file; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for artifacts, metrics and provenance.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic fundus corpus with a manifest.
    SynthData(commands::SynthData),
    /// Assign stratified train/val/test splits to a manifest.
    Split(commands::SplitCmd),
    /// Train the per-level encoder/decoder stack used for stylization.
    TrainAe(commands::TrainAe),
    /// Train a DCGAN generator and discriminator.
    TrainGan(commands::TrainGan),
    /// Train a Wasserstein generator and weight-clipped critic.
    TrainWgan(commands::TrainGan),
    /// Train the CAM-compatible classifier.
    TrainClassifier(commands::TrainClassifier),
    /// Sample images from a generator checkpoint.
    Generate(commands::Generate),
    /// Multi-level style transfer of content images onto style images.
    Stylize(commands::Stylize),
    /// Average true-class probability of a set of images.
    Verify(commands::Verify),
    /// Class activation maps and red overlays.
    Cam(commands::Cam),
    /// Verification value as a function of generator training-set size.
    Sweep(commands::Sweep),
    /// Classes the classifier associates with a set of images.
    Report(commands::Report),
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::SynthData(a) => commands::synth_data(a),
        Command::Split(a) => commands::split(a),
        Command::TrainAe(a) => commands::train_ae(a),
        Command::TrainGan(a) => commands::train_gan(a, false),
        Command::TrainWgan(a) => commands::train_gan(a, true),
        Command::TrainClassifier(a) => commands::train_classifier(a),
        Command::Generate(a) => commands::generate(a),
        Command::Stylize(a) => commands::stylize(a),
        Command::Verify(a) => commands::verify(a),
        Command::Cam(a) => commands::cam(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
