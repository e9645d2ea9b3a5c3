//! Run configuration: one flat `key = value` file covering every knob, with
//! command-line flags layered on top. The resolved configuration is written
//! next to each command's outputs and reproduces the run when fed back.

use std::path::{Path, PathBuf};

use ringqcnn::data::{write_atomic, SynthConfig};
use ringqcnn::error::{Error, Result};
use ringqcnn::noise::NoiseSpec;
use ringqcnn::train::{GradMethod, TrainConfig};

/// Which stored volume feeds the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceModality {
    /// The single post-contrast acquisition.
    T1Gd,
    /// Pixel-wise average of the four acquired modalities; slice selection
    /// still scores the T1Gd stack.
    Fused,
    /// The synthetic single-modality stack.
    Synth,
}

impl SourceModality {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "t1gd" => Ok(SourceModality::T1Gd),
            "fused" => Ok(SourceModality::Fused),
            "synth" => Ok(SourceModality::Synth),
            other => Err(Error::config(format!(
                "unknown modality {other:?}, expected t1gd, fused or synth"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SourceModality::T1Gd => "t1gd",
            SourceModality::Fused => "fused",
            SourceModality::Synth => "synth",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub modality: SourceModality,
    pub levels: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub early_stop_patience: usize,
    pub grad_method: GradMethod,

    pub k_slices: usize,
    pub score_size: usize,
    pub input_size: usize,
    pub pca_var: f64,
    pub d_max: usize,
    pub clip: f64,

    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,

    /// Pixel-noise level for this run's preprocessing (0 = clean).
    pub image_sigma: f64,
    /// Rotation-angle noise level for this run's circuits (0 = clean).
    pub gate_sigma: f64,
    /// Image sigma the noise-exp scenarios use for their noisy conditions.
    pub noise_image_sigma: f64,
    /// Gate sigma the noise-exp scenarios use for their noisy conditions.
    pub noise_gate_sigma: f64,

    pub n_patients: usize,
    pub slices_per_patient: usize,
    pub image_size: usize,
    pub mp_mri: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            modality: SourceModality::Synth,
            levels: 1,
            epochs: 60,
            batch_size: 16,
            lr_init: 3e-3,
            lr_min: 2e-4,
            lr_factor: 0.5,
            lr_patience: 3,
            early_stop_patience: 5,
            grad_method: GradMethod::ParameterShift,
            k_slices: 10,
            score_size: 64,
            input_size: 16,
            pca_var: 0.95,
            d_max: 18,
            clip: 3.0,
            train_frac: 0.7,
            val_frac: 0.15,
            test_frac: 0.15,
            image_sigma: 0.0,
            gate_sigma: 0.0,
            noise_image_sigma: 0.03,
            noise_gate_sigma: 0.02,
            n_patients: 28,
            slices_per_patient: 24,
            image_size: 64,
            mp_mri: false,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("cannot parse {key} = {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(format!(
            "cannot parse {key} = {value:?}, expected true or false"
        ))),
    }
}

impl RunConfig {
    /// Parse the flat text form. Unknown or repeated keys are configuration
    /// errors; `#` starts a comment line.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected key = value, got {line:?}", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::config(format!("line {}: repeated key {key}", lineno + 1)));
            }
            match key {
                "seed" => config.seed = parse_value(key, value)?,
                "data_dir" => config.data_dir = PathBuf::from(value),
                "out_dir" => config.out_dir = PathBuf::from(value),
                "modality" => config.modality = SourceModality::parse(value)?,
                "levels" => config.levels = parse_value(key, value)?,
                "epochs" => config.epochs = parse_value(key, value)?,
                "batch_size" => config.batch_size = parse_value(key, value)?,
                "lr_init" => config.lr_init = parse_value(key, value)?,
                "lr_min" => config.lr_min = parse_value(key, value)?,
                "lr_factor" => config.lr_factor = parse_value(key, value)?,
                "lr_patience" => config.lr_patience = parse_value(key, value)?,
                "early_stop_patience" => config.early_stop_patience = parse_value(key, value)?,
                "grad_method" => config.grad_method = GradMethod::parse(value)?,
                "k_slices" => config.k_slices = parse_value(key, value)?,
                "score_size" => config.score_size = parse_value(key, value)?,
                "input_size" => config.input_size = parse_value(key, value)?,
                "pca_var" => config.pca_var = parse_value(key, value)?,
                "d_max" => config.d_max = parse_value(key, value)?,
                "clip" => config.clip = parse_value(key, value)?,
                "train_frac" => config.train_frac = parse_value(key, value)?,
                "val_frac" => config.val_frac = parse_value(key, value)?,
                "test_frac" => config.test_frac = parse_value(key, value)?,
                "image_sigma" => config.image_sigma = parse_value(key, value)?,
                "gate_sigma" => config.gate_sigma = parse_value(key, value)?,
                "noise_image_sigma" => config.noise_image_sigma = parse_value(key, value)?,
                "noise_gate_sigma" => config.noise_gate_sigma = parse_value(key, value)?,
                "n_patients" => config.n_patients = parse_value(key, value)?,
                "slices_per_patient" => config.slices_per_patient = parse_value(key, value)?,
                "image_size" => config.image_size = parse_value(key, value)?,
                "mp_mri" => config.mp_mri = parse_bool(key, value)?,
                other => {
                    return Err(Error::config(format!("line {}: unknown key {other}", lineno + 1)))
                }
            }
        }
        Ok(config)
    }

    pub fn to_text(&self) -> String {
        format!(
            "seed = {}\n\
             data_dir = {}\n\
             out_dir = {}\n\
             modality = {}\n\
             levels = {}\n\
             epochs = {}\n\
             batch_size = {}\n\
             lr_init = {}\n\
             lr_min = {}\n\
             lr_factor = {}\n\
             lr_patience = {}\n\
             early_stop_patience = {}\n\
             grad_method = {}\n\
             k_slices = {}\n\
             score_size = {}\n\
             input_size = {}\n\
             pca_var = {}\n\
             d_max = {}\n\
             clip = {}\n\
             train_frac = {}\n\
             val_frac = {}\n\
             test_frac = {}\n\
             image_sigma = {}\n\
             gate_sigma = {}\n\
             noise_image_sigma = {}\n\
             noise_gate_sigma = {}\n\
             n_patients = {}\n\
             slices_per_patient = {}\n\
             image_size = {}\n\
             mp_mri = {}\n",
            self.seed,
            self.data_dir.display(),
            self.out_dir.display(),
            self.modality.as_str(),
            self.levels,
            self.epochs,
            self.batch_size,
            self.lr_init,
            self.lr_min,
            self.lr_factor,
            self.lr_patience,
            self.early_stop_patience,
            self.grad_method.as_str(),
            self.k_slices,
            self.score_size,
            self.input_size,
            self.pca_var,
            self.d_max,
            self.clip,
            self.train_frac,
            self.val_frac,
            self.test_frac,
            self.image_sigma,
            self.gate_sigma,
            self.noise_image_sigma,
            self.noise_gate_sigma,
            self.n_patients,
            self.slices_per_patient,
            self.image_size,
            self.mp_mri,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("reading {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        // NoiseSpec rejects negative or non-finite sigmas
        NoiseSpec::new(self.image_sigma, self.gate_sigma, self.seed)?;
        NoiseSpec::new(self.noise_image_sigma, self.noise_gate_sigma, self.seed)?;
        if self.levels == 0 {
            return Err(Error::config("levels must be at least 1".to_string()));
        }
        if self.k_slices == 0 {
            return Err(Error::config("k_slices must be at least 1".to_string()));
        }
        if self.score_size < 4 || self.input_size < 2 {
            return Err(Error::config(format!(
                "working sizes too small: score_size {} (min 4), input_size {} (min 2)",
                self.score_size, self.input_size
            )));
        }
        if !(self.pca_var > 0.0 && self.pca_var <= 1.0) {
            return Err(Error::config(format!(
                "pca_var must be in (0, 1], got {}",
                self.pca_var
            )));
        }
        if self.d_max == 0 {
            return Err(Error::config("d_max must be at least 1".to_string()));
        }
        if !(self.clip > 0.0) || !self.clip.is_finite() {
            return Err(Error::config(format!("clip must be positive, got {}", self.clip)));
        }
        let fracs = [self.train_frac, self.val_frac, self.test_frac];
        if fracs.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(Error::config(format!(
                "split fractions must all be positive, got {fracs:?}"
            )));
        }
        let sum: f64 = fracs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split fractions sum to {sum}, expected 1")));
        }
        // synthesis precondition: stratified three-way splitting needs at
        // least two patients per class
        if self.n_patients < 4 {
            return Err(Error::config(format!(
                "n_patients {} too small for a stratified split, need at least 4",
                self.n_patients
            )));
        }
        if self.slices_per_patient == 0 {
            return Err(Error::config("slices_per_patient must be at least 1".to_string()));
        }
        if self.image_size < 8 {
            return Err(Error::config(format!(
                "image_size {} too small, need at least 8",
                self.image_size
            )));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_init: self.lr_init,
            lr_min: self.lr_min,
            lr_factor: self.lr_factor,
            lr_patience: self.lr_patience,
            early_stop_patience: self.early_stop_patience,
            gate_noise_sigma: self.gate_sigma,
            grad_method: self.grad_method,
            seed: self.seed,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        let mut sc = SynthConfig::defaults(self.seed);
        sc.n_patients = self.n_patients;
        sc.slices_per_patient = self.slices_per_patient;
        sc.height = self.image_size;
        sc.width = self.image_size;
        sc.mp_mri = self.mp_mri;
        sc
    }

    pub fn fractions(&self) -> (f64, f64, f64) {
        (self.train_frac, self.val_frac, self.test_frac)
    }
}
