use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use ringqcnn::error::Result;
use ringqcnn::train::GradMethod;
use ringqcnn_cli::commands::{cmd_eval, cmd_noise_exp, cmd_preprocess, cmd_synth, cmd_train};
use ringqcnn_cli::config::{RunConfig, SourceModality};

/// Ring-topology quantum convolutional classifier experiments.
#[derive(Parser)]
#[command(name = "ringqcnn", version, about, max_term_width = 100)]
struct Cli {
    /// Config file with `key = value` lines; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Base seed feeding every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory all outputs are written to.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-class slice dataset.
    Synth(SynthArgs),
    /// Turn a dataset into an angle-encoded feature table.
    Preprocess(PreprocessArgs),
    /// Train the classifier on a prepared feature table.
    Train(TrainArgs),
    /// Score the test split with a trained checkpoint.
    Eval(EvalArgs),
    /// Run clean, image-noise, gate-noise, and hybrid pipelines end to end.
    NoiseExp(NoiseExpArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of patients to generate.
    #[arg(long)]
    patients: Option<usize>,

    /// Slices per patient volume.
    #[arg(long)]
    slices: Option<usize>,

    /// Square slice edge length in pixels.
    #[arg(long)]
    image_size: Option<usize>,

    /// Write four acquired modalities instead of a single stack.
    #[arg(long, value_name = "BOOL")]
    mp_mri: Option<bool>,
}

impl SynthArgs {
    fn apply(&self, config: &mut RunConfig) {
        if let Some(v) = self.patients {
            config.n_patients = v;
        }
        if let Some(v) = self.slices {
            config.slices_per_patient = v;
        }
        if let Some(v) = self.image_size {
            config.image_size = v;
        }
        if let Some(v) = self.mp_mri {
            config.mp_mri = v;
        }
    }
}

#[derive(Args)]
struct PreprocessArgs {
    /// Dataset directory (holds labels.csv and patient folders).
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,

    /// Source images: t1gd, fused, or synth.
    #[arg(long)]
    modality: Option<String>,

    /// Slices kept per patient.
    #[arg(long)]
    k_slices: Option<usize>,

    /// Working edge length for slice scoring.
    #[arg(long)]
    score_size: Option<usize>,

    /// Edge length slices are resized to before flattening.
    #[arg(long)]
    input_size: Option<usize>,

    /// Fraction of training variance the projection must capture.
    #[arg(long)]
    pca_var: Option<f64>,

    /// Upper bound on the projected dimension.
    #[arg(long)]
    d_max: Option<usize>,

    /// Symmetric clip applied before scaling features to angles.
    #[arg(long)]
    clip: Option<f64>,

    /// Gaussian pixel-noise sigma added to source images.
    #[arg(long)]
    image_sigma: Option<f64>,
}

impl PreprocessArgs {
    fn apply(&self, config: &mut RunConfig) -> Result<()> {
        if let Some(v) = &self.data {
            config.data_dir = v.clone();
        }
        if let Some(v) = &self.modality {
            config.modality = SourceModality::parse(v)?;
        }
        if let Some(v) = self.k_slices {
            config.k_slices = v;
        }
        if let Some(v) = self.score_size {
            config.score_size = v;
        }
        if let Some(v) = self.input_size {
            config.input_size = v;
        }
        if let Some(v) = self.pca_var {
            config.pca_var = v;
        }
        if let Some(v) = self.d_max {
            config.d_max = v;
        }
        if let Some(v) = self.clip {
            config.clip = v;
        }
        if let Some(v) = self.image_sigma {
            config.image_sigma = v;
        }
        Ok(())
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Maximum number of epochs.
    #[arg(long)]
    epochs: Option<usize>,

    /// Mini-batch size.
    #[arg(long)]
    batch_size: Option<usize>,

    /// Initial learning rate.
    #[arg(long)]
    lr: Option<f64>,

    /// Learning-rate floor for plateau decay.
    #[arg(long)]
    lr_min: Option<f64>,

    /// Gaussian angle-noise sigma applied during gradient batches.
    #[arg(long)]
    gate_sigma: Option<f64>,

    /// Gradient method: parameter-shift, finite-diff, or adjoint.
    #[arg(long)]
    grad_method: Option<String>,

    /// Convolution-pooling level count.
    #[arg(long)]
    levels: Option<usize>,
}

impl TrainArgs {
    fn apply(&self, config: &mut RunConfig) -> Result<()> {
        if let Some(v) = self.epochs {
            config.epochs = v;
        }
        if let Some(v) = self.batch_size {
            config.batch_size = v;
        }
        if let Some(v) = self.lr {
            config.lr_init = v;
        }
        if let Some(v) = self.lr_min {
            config.lr_min = v;
        }
        if let Some(v) = self.gate_sigma {
            config.gate_sigma = v;
        }
        if let Some(v) = &self.grad_method {
            config.grad_method = GradMethod::parse(v)?;
        }
        if let Some(v) = self.levels {
            config.levels = v;
        }
        Ok(())
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Gaussian angle-noise sigma applied while scoring.
    #[arg(long)]
    gate_sigma: Option<f64>,
}

impl EvalArgs {
    fn apply(&self, config: &mut RunConfig) {
        if let Some(v) = self.gate_sigma {
            config.gate_sigma = v;
        }
    }
}

#[derive(Args)]
struct NoiseExpArgs {
    /// Dataset directory (holds labels.csv and patient folders).
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,

    /// Pixel-noise sigma for the image and hybrid scenarios.
    #[arg(long)]
    image_sigma: Option<f64>,

    /// Angle-noise sigma for the gate and hybrid scenarios.
    #[arg(long)]
    gate_sigma: Option<f64>,
}

impl NoiseExpArgs {
    fn apply(&self, config: &mut RunConfig) {
        if let Some(v) = &self.data {
            config.data_dir = v.clone();
        }
        if let Some(v) = self.image_sigma {
            config.noise_image_sigma = v;
        }
        if let Some(v) = self.gate_sigma {
            config.noise_gate_sigma = v;
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    match &cli.command {
        Command::Synth(args) => {
            args.apply(&mut config);
            cmd_synth(&config)
        }
        Command::Preprocess(args) => {
            args.apply(&mut config)?;
            cmd_preprocess(&config)
        }
        Command::Train(args) => {
            args.apply(&mut config)?;
            cmd_train(&config)
        }
        Command::Eval(args) => {
            args.apply(&mut config);
            cmd_eval(&config).map(|_| ())
        }
        Command::NoiseExp(args) => {
            args.apply(&mut config);
            cmd_noise_exp(&config).map(|_| ())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {}: {e}", e.class());
        std::process::exit(1);
    }
}
