//! Dataset layout, synthetic data generation, and patient-level splitting.
//!
//! Layout: `root/labels.csv` with columns `patient_id,label`, then
//! `root/<patient_id>/<modality>/slice_###.pgm`. Slices are 16-bit binary
//! P5 graymaps (big-endian samples, maxval 65535); raw little-endian f32
//! files with a one-line `H W` header are accepted alongside.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::preprocess::{FeatureVector, Image, Modality, SliceVolume};
use crate::rng::{stream, tag};

/// Write through a sibling temp file and rename, so readers never observe a
/// partial file and reruns replace outputs in one step.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut tmp_name = path.as_os_str().to_owned();
    tmp_name.push(".tmp");
    let tmp = PathBuf::from(tmp_name);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Encode as 16-bit binary P5. Intensities are clamped to [0, 2] and mapped
/// onto the full sample range.
pub fn encode_pgm16(image: &Image) -> Vec<u8> {
    let mut bytes = format!("P5\n{} {}\n65535\n", image.width(), image.height()).into_bytes();
    for p in image.pixels() {
        let q = (p.clamp(0.0, 2.0) / 2.0 * 65535.0).round() as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    bytes
}

/// Decode a 16-bit binary P5 file; samples come back as raw counts in
/// [0, 65535].
pub fn decode_pgm16(bytes: &[u8], what: &str) -> Result<Image> {
    let bad = |msg: &str| Error::data(format!("{what}: {msg}"));
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(bytes)? != "P5" {
        return Err(bad("not a binary graymap (missing P5 magic)"));
    }
    let width: usize = token(bytes)?.parse().map_err(|_| bad("bad width"))?;
    let height: usize = token(bytes)?.parse().map_err(|_| bad("bad height"))?;
    let maxval: usize = token(bytes)?.parse().map_err(|_| bad("bad maxval"))?;
    if maxval != 65535 {
        return Err(bad("only 16-bit graymaps (maxval 65535) are supported"));
    }
    pos += 1; // single whitespace byte after maxval
    let payload = bytes
        .get(pos..)
        .filter(|p| p.len() == 2 * width * height)
        .ok_or_else(|| bad("pixel payload has the wrong length"))?;
    let pixels = payload
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
        .collect();
    Image::new(height, width, pixels)
}

/// Encode as raw f32: one text line `H W`, then row-major little-endian
/// samples.
pub fn encode_f32(image: &Image) -> Vec<u8> {
    let mut bytes = format!("{} {}\n", image.height(), image.width()).into_bytes();
    for p in image.pixels() {
        bytes.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    bytes
}

pub fn decode_f32(bytes: &[u8], what: &str) -> Result<Image> {
    let bad = |msg: &str| Error::data(format!("{what}: {msg}"));
    let newline = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| bad("missing header line"))?;
    let header = String::from_utf8_lossy(&bytes[..newline]);
    let mut parts = header.split_whitespace();
    let height: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("bad height"))?;
    let width: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("bad width"))?;
    if parts.next().is_some() {
        return Err(bad("header has trailing tokens"));
    }
    let payload = bytes
        .get(newline + 1..)
        .filter(|p| p.len() == 4 * width * height)
        .ok_or_else(|| bad("sample payload has the wrong length"))?;
    let pixels: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if pixels.iter().any(|p| !p.is_finite()) {
        return Err(bad("non-finite sample"));
    }
    Image::new(height, width, pixels)
}

/// Which partition a patient belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::data(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PatientEntry {
    pub id: String,
    pub label: u8,
    pub modalities: Vec<Modality>,
}

/// Validated view of an on-disk dataset; volumes load on demand.
#[derive(Clone, Debug)]
pub struct Manifest {
    pub root: PathBuf,
    pub patients: Vec<PatientEntry>,
}

const DISK_MODALITIES: [Modality; 5] = [
    Modality::T1Gd,
    Modality::T1w,
    Modality::T2,
    Modality::Flair,
    Modality::Synth,
];

fn slice_files(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(stem) = name
            .strip_suffix(".pgm")
            .or_else(|| name.strip_suffix(".f32"))
        else {
            continue;
        };
        let Some(index) = stem
            .strip_prefix("slice_")
            .and_then(|digits| digits.parse::<usize>().ok())
        else {
            continue;
        };
        files.push((index, path));
    }
    files.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    for pair in files.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::data(format!(
                "duplicate slice index {} in {}",
                pair[0].0,
                dir.display()
            )));
        }
    }
    Ok(files)
}

impl Manifest {
    pub fn load(root: &Path) -> Result<Self> {
        let labels_path = root.join("labels.csv");
        let text = std::fs::read_to_string(&labels_path)
            .map_err(|e| Error::data(format!("reading {}: {e}", labels_path.display())))?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "patient_id,label")) => {}
            other => {
                return Err(Error::data(format!(
                    "labels.csv must start with 'patient_id,label', got {:?}",
                    other.map(|(_, l)| l)
                )))
            }
        }
        let mut patients = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let row = lineno + 1;
            let (id, label_text) = line
                .split_once(',')
                .ok_or_else(|| Error::data(format!("labels.csv row {row}: expected 2 columns")))?;
            let label = match label_text.trim() {
                "0" => 0u8,
                "1" => 1u8,
                other => {
                    return Err(Error::data(format!(
                        "labels.csv row {row}: label must be 0 or 1, got '{other}'"
                    )))
                }
            };
            let id = id.trim().to_string();
            if !seen.insert(id.clone()) {
                return Err(Error::data(format!(
                    "labels.csv row {row}: duplicate patient '{id}'"
                )));
            }
            let dir = root.join(&id);
            if !dir.is_dir() {
                return Err(Error::data(format!("patient '{id}' has no directory")));
            }
            let mut modalities = Vec::new();
            for m in DISK_MODALITIES {
                let mdir = dir.join(m.as_str());
                if mdir.is_dir() && !slice_files(&mdir)?.is_empty() {
                    modalities.push(m);
                }
            }
            if modalities.is_empty() {
                return Err(Error::data(format!(
                    "patient '{id}' has no modality directory with slices"
                )));
            }
            patients.push(PatientEntry { id, label, modalities });
        }
        if patients.is_empty() {
            return Err(Error::data("labels.csv lists no patients".to_string()));
        }
        Ok(Self { root: root.to_path_buf(), patients })
    }

    pub fn patient(&self, id: &str) -> Result<&PatientEntry> {
        self.patients
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| Error::data(format!("unknown patient '{id}'")))
    }

    /// Load one patient's slice stack for a modality.
    pub fn volume(&self, patient_id: &str, modality: Modality) -> Result<SliceVolume> {
        let dir = self.root.join(patient_id).join(modality.as_str());
        let files = slice_files(&dir)
            .map_err(|e| e.prefixed(&format!("volume {patient_id}/{}", modality.as_str())))?;
        if files.is_empty() {
            return Err(Error::data(format!(
                "volume {patient_id}/{} has no slices",
                modality.as_str()
            )));
        }
        let mut slices = Vec::with_capacity(files.len());
        for (_, path) in files {
            let bytes = std::fs::read(&path)?;
            let what = path.display().to_string();
            let image = if path.extension().is_some_and(|e| e == "f32") {
                decode_f32(&bytes, &what)?
            } else {
                decode_pgm16(&bytes, &what)?
            };
            slices.push(image);
        }
        SliceVolume::new(patient_id.to_string(), modality, slices)
    }
}

/// Stratified patient split. Stage one fixes per-split totals by largest
/// remainder on the overall count; stage two fills per-class quotas the same
/// way under those totals (ties go to the earlier split, then the lower
/// class). Membership within a class is a seeded shuffle.
pub fn split_patients(
    manifest: &Manifest,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<BTreeMap<String, Split>> {
    let fr = [fractions.0, fractions.1, fractions.2];
    if fr.iter().any(|f| *f < 0.0 || !f.is_finite()) {
        return Err(Error::config(format!("split fractions must be non-negative, got {fr:?}")));
    }
    if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split fractions must sum to 1, got {fr:?}")));
    }

    let n = manifest.patients.len();
    let totals = largest_remainder(n, &fr);

    let classes: [Vec<&PatientEntry>; 2] = [
        manifest.patients.iter().filter(|p| p.label == 0).collect(),
        manifest.patients.iter().filter(|p| p.label == 1).collect(),
    ];

    // Per-class quotas: floors first, then distribute what is missing by
    // fractional remainder without exceeding per-split totals.
    let mut quota = [[0usize; 3]; 2];
    let mut col_used = [0usize; 3];
    for (c, members) in classes.iter().enumerate() {
        for s in 0..3 {
            quota[c][s] = (members.len() as f64 * fr[s]).floor() as usize;
            col_used[s] += quota[c][s];
        }
    }
    loop {
        let short: Vec<usize> = (0..2)
            .filter(|&c| quota[c].iter().sum::<usize>() < classes[c].len())
            .collect();
        if short.is_empty() {
            break;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for &c in &short {
            for s in 0..3 {
                if col_used[s] >= totals[s] {
                    continue;
                }
                let ideal = classes[c].len() as f64 * fr[s];
                let priority = ideal - quota[c][s] as f64;
                let better = match best {
                    None => true,
                    // Ties: earlier split wins, then lower class.
                    Some((bp, bs, bc)) => {
                        priority > bp + 1e-12
                            || (priority > bp - 1e-12 && (s < bs || (s == bs && c < bc)))
                    }
                };
                if better {
                    best = Some((priority, s, c));
                }
            }
        }
        let Some((_, s, c)) = best else {
            return Err(Error::data("split quota allocation failed".to_string()));
        };
        quota[c][s] += 1;
        col_used[s] += 1;
    }

    for (c, q) in quota.iter().enumerate() {
        if !classes[c].is_empty() && q.iter().any(|&count| count == 0) {
            return Err(Error::data(format!(
                "class {c} would leave a split empty; need more patients or different fractions"
            )));
        }
    }

    let mut assignment = BTreeMap::new();
    for (c, members) in classes.iter().enumerate() {
        let mut ids: Vec<&str> = members.iter().map(|p| p.id.as_str()).collect();
        ids.shuffle(&mut stream(seed, &[tag::SPLIT, c as u64]));
        let mut cursor = 0;
        for (s, split) in Split::ALL.iter().enumerate() {
            for id in ids.iter().skip(cursor).take(quota[c][s]) {
                assignment.insert(id.to_string(), *split);
            }
            cursor += quota[c][s];
        }
    }
    Ok(assignment)
}

fn largest_remainder(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let ideal: Vec<f64> = fractions.iter().map(|f| n as f64 * f).collect();
    let mut counts = [0usize; 3];
    for (c, i) in counts.iter_mut().zip(&ideal) {
        *c = i.floor() as usize;
    }
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - counts[a] as f64;
        let rb = ideal[b] - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for s in order {
        if left == 0 {
            break;
        }
        counts[s] += 1;
        left -= 1;
    }
    counts
}

/// One selected slice inheriting the owning patient's label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSlice {
    pub patient_id: String,
    pub slice_index: usize,
    pub label: u8,
}

/// Repeat the patient label onto each selected slice.
pub fn expand_labels(patient_id: &str, label: u8, selected: &[usize]) -> Vec<LabeledSlice> {
    selected
        .iter()
        .map(|&slice_index| LabeledSlice {
            patient_id: patient_id.to_string(),
            slice_index,
            label,
        })
        .collect()
}

/// A slice ready for the model: features plus provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceSample {
    pub patient_id: String,
    pub slice_index: usize,
    pub label: u8,
    pub features: FeatureVector,
}

/// Synthetic dataset shape and class contrast. Index 0 of the per-class
/// pairs is class 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub slices_per_patient: usize,
    pub height: usize,
    pub width: usize,
    /// Peak blob intensity per class, on top of a background ramp of 0.25.
    pub blob_amp: [f64; 2],
    /// Texture noise std per class inside the blob band; outside the band
    /// the std is scaled by 0.3.
    pub texture_std: [f64; 2],
    /// Write the four acquired modalities instead of a single `synth` stack.
    pub mp_mri: bool,
    pub seed: u64,
}

impl SynthConfig {
    pub fn defaults(seed: u64) -> Self {
        Self {
            n_patients: 28,
            slices_per_patient: 24,
            height: 64,
            width: 64,
            blob_amp: [0.25, 1.3],
            texture_std: [0.04, 0.16],
            mp_mri: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_patients < 4 {
            return Err(Error::config(format!(
                "synthetic dataset needs at least 4 patients, got {}",
                self.n_patients
            )));
        }
        if self.slices_per_patient == 0 {
            return Err(Error::config("slices_per_patient must be >= 1".to_string()));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::config(format!(
                "synthetic slices must be at least 8x8, got {}x{}",
                self.height, self.width
            )));
        }
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !self.blob_amp.iter().chain(&self.texture_std).all(|&x| finite_nonneg(x)) {
            return Err(Error::config("contrast parameters must be finite and >= 0".to_string()));
        }
        Ok(())
    }
}

/// Contiguous centered run of slices that carry the blob, 40% of the stack
/// (at least one slice).
pub fn blob_band(n_slices: usize) -> std::ops::Range<usize> {
    let count = ((0.4 * n_slices as f64).round() as usize).clamp(1, n_slices);
    let start = (n_slices - count) / 2;
    start..start + count
}

const BACKGROUND_RAMP: f64 = 0.25;
const OFF_BAND_TEXTURE: f64 = 0.3;
/// Per acquired modality, the blob intensity scale in mpMRI mode.
const MP_AMP_SCALE: [f64; 4] = [1.0, 0.85, 0.7, 1.15];

fn synth_slice(
    config: &SynthConfig,
    patient: usize,
    modality_index: u64,
    slice: usize,
    amp_scale: f64,
    jitter: (f64, f64),
) -> Image {
    let (h, w) = (config.height, config.width);
    let label = patient % 2;
    let in_band = blob_band(config.slices_per_patient).contains(&slice);
    let texture = config.texture_std[label] * if in_band { 1.0 } else { OFF_BAND_TEXTURE };
    let amp = config.blob_amp[label] * amp_scale;
    let sigma = h.min(w) as f64 / 8.0;
    let (cr, cc) = (h as f64 / 2.0 + jitter.0, w as f64 / 2.0 + jitter.1);

    let mut rng = stream(config.seed, &[tag::SYNTH_PATIENT, patient as u64, modality_index, slice as u64]);
    let mut pixels = Vec::with_capacity(h * w);
    for r in 0..h {
        let ramp = BACKGROUND_RAMP * r as f64 / (h - 1) as f64;
        for c in 0..w {
            let noise: f64 = rng.sample::<f64, _>(StandardNormal) * texture;
            let blob = if in_band && amp > 0.0 {
                let dr = r as f64 - cr;
                let dc = c as f64 - cc;
                amp * (-(dr * dr + dc * dc) / (2.0 * sigma * sigma)).exp()
            } else {
                0.0
            };
            pixels.push(ramp + noise + blob);
        }
    }
    Image::new(h, w, pixels).expect("dimensions validated")
}

/// Generate a complete dataset under `root`: labels.csv plus per-patient
/// modality directories of 16-bit graymaps. Byte-identical per config.
pub fn generate_synthetic(config: &SynthConfig, root: &Path) -> Result<()> {
    config.validate()?;
    std::fs::create_dir_all(root)?;

    let mut labels = String::from("patient_id,label\n");
    for p in 0..config.n_patients {
        use std::fmt::Write as _;
        let _ = writeln!(labels, "p{p:03},{}", p % 2);
    }
    write_atomic(&root.join("labels.csv"), labels.as_bytes())?;

    let modalities: Vec<(Modality, f64)> = if config.mp_mri {
        Modality::ALL_ACQUIRED
            .iter()
            .zip(MP_AMP_SCALE)
            .map(|(m, s)| (*m, s))
            .collect()
    } else {
        vec![(Modality::Synth, 1.0)]
    };

    for p in 0..config.n_patients {
        let mut patient_rng = stream(config.seed, &[tag::SYNTH, p as u64]);
        let jitter = (
            patient_rng.random_range(-(config.height as f64) / 10.0..config.height as f64 / 10.0),
            patient_rng.random_range(-(config.width as f64) / 10.0..config.width as f64 / 10.0),
        );
        for (modality, amp_scale) in &modalities {
            let dir = root.join(format!("p{p:03}")).join(modality.as_str());
            std::fs::create_dir_all(&dir)?;
            for s in 0..config.slices_per_patient {
                let image = synth_slice(config, p, modality.index(), s, *amp_scale, jitter);
                write_atomic(&dir.join(format!("slice_{s:03}.pgm")), &encode_pgm16(&image))?;
            }
        }
    }
    Ok(())
}
