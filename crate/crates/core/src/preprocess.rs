//! Classical front end: intensity normalization, area resize, energy-based
//! slice selection, modality fusion, z-scoring, PCA with a qubit cap, and
//! the final scaling of coordinates into rotation angles.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major grayscale raster. Values are arbitrary real intensities until
/// normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::data(format!("image dimensions {height}x{width} are empty")));
        }
        if pixels.len() != height * width {
            return Err(Error::data(format!(
                "image buffer has {} pixels, expected {height}x{width}",
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }
}

/// Acquisition channel of a slice stack. `Fused` only ever comes out of
/// `fuse_modalities`; `Synth` marks generated data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    T1Gd,
    T1w,
    T2,
    Flair,
    Fused,
    Synth,
}

impl Modality {
    pub const ALL_ACQUIRED: [Modality; 4] = [Modality::T1Gd, Modality::T1w, Modality::T2, Modality::Flair];

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::T1Gd => "t1gd",
            Modality::T1w => "t1w",
            Modality::T2 => "t2",
            Modality::Flair => "flair",
            Modality::Fused => "fused",
            Modality::Synth => "synth",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "t1gd" => Ok(Modality::T1Gd),
            "t1w" => Ok(Modality::T1w),
            "t2" => Ok(Modality::T2),
            "flair" => Ok(Modality::Flair),
            "fused" => Ok(Modality::Fused),
            "synth" => Ok(Modality::Synth),
            other => Err(Error::config(format!("unknown modality '{other}'"))),
        }
    }

    /// Stable small integer for rng stream keying.
    pub fn index(&self) -> u64 {
        match self {
            Modality::T1Gd => 0,
            Modality::T1w => 1,
            Modality::T2 => 2,
            Modality::Flair => 3,
            Modality::Fused => 4,
            Modality::Synth => 5,
        }
    }
}

/// One patient's ordered slice stack for a single modality.
#[derive(Clone, Debug)]
pub struct SliceVolume {
    pub patient_id: String,
    pub modality: Modality,
    slices: Vec<Image>,
}

impl SliceVolume {
    pub fn new(patient_id: String, modality: Modality, slices: Vec<Image>) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::data(format!("volume {patient_id}/{} has no slices", modality.as_str())))?;
        let (h, w) = (first.height(), first.width());
        if slices.iter().any(|s| s.height() != h || s.width() != w) {
            return Err(Error::data(format!(
                "volume {patient_id}/{} mixes slice dimensions",
                modality.as_str()
            )));
        }
        Ok(Self { patient_id, modality, slices })
    }

    pub fn slices(&self) -> &[Image] {
        &self.slices
    }
}

/// Eq. of the intensity spread: min maps to 0, max to 1, constants to 0.
pub fn minmax_normalize(image: &Image) -> Result<Image> {
    if image.pixels().iter().any(|p| !p.is_finite()) {
        return Err(Error::data("image contains non-finite intensities".to_string()));
    }
    let lo = image.pixels().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = image.pixels().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let pixels = if range == 0.0 {
        vec![0.0; image.pixels().len()]
    } else {
        image.pixels().iter().map(|p| (p - lo) / range).collect()
    };
    Image::new(image.height(), image.width(), pixels)
}

/// Per output index, the covered input indices and their overlap lengths.
/// Overlaps along one axis sum to n_in/n_out.
fn axis_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|k| {
            let start = k as f64 * scale;
            let end = (k as f64 + 1.0) * scale;
            let first = start.floor() as usize;
            let last = (end.ceil() as usize).min(n_in);
            (first..last)
                .filter_map(|i| {
                    let overlap = (end.min(i as f64 + 1.0) - start.max(i as f64)).max(0.0);
                    (overlap > 0.0).then_some((i, overlap))
                })
                .collect()
        })
        .collect()
}

/// Area interpolation: each output pixel is the mean of the input intensity
/// over the rectangle its cell covers. Exact block mean when dimensions
/// divide; output range never exceeds the input range.
pub fn resize_area(image: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::config(format!("resize target {out_h}x{out_w} is empty")));
    }
    let rows = axis_weights(image.height(), out_h);
    let cols = axis_weights(image.width(), out_w);
    let cell_area =
        (image.height() as f64 / out_h as f64) * (image.width() as f64 / out_w as f64);
    let mut pixels = Vec::with_capacity(out_h * out_w);
    for row_cover in &rows {
        for col_cover in &cols {
            let mut acc = 0.0;
            for (r, wr) in row_cover {
                for (c, wc) in col_cover {
                    acc += wr * wc * image.get(*r, *c);
                }
            }
            pixels.push(acc / cell_area);
        }
    }
    Image::new(out_h, out_w, pixels)
}

fn mean_and_population_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Slice informativeness: mean intensity times population standard
/// deviation. Zero for flat slices.
pub fn energy_score(image: &Image) -> f64 {
    let (mean, std) = mean_and_population_std(image.pixels());
    mean * std
}

/// Scores for every slice plus the winning indices.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyRanking {
    /// (slice_index, score) in slice order.
    pub scores: Vec<(usize, f64)>,
    /// min(k, slice count) indices, highest score first, ties to the lower
    /// slice index.
    pub selected: Vec<usize>,
}

/// Normalize, resize to `work_size`, and score every slice; keep the k most
/// energetic.
pub fn select_top_k(volume: &SliceVolume, k: usize, work_size: (usize, usize)) -> Result<EnergyRanking> {
    if k == 0 {
        return Err(Error::config("slice selection needs k >= 1".to_string()));
    }
    let mut scores = Vec::with_capacity(volume.slices().len());
    for (i, slice) in volume.slices().iter().enumerate() {
        let prepared = resize_area(&minmax_normalize(slice)?, work_size.0, work_size.1)?;
        scores.push((i, energy_score(&prepared)));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b].1.partial_cmp(&scores[a].1).unwrap().then(a.cmp(&b))
    });
    order.truncate(k.min(scores.len()));
    Ok(EnergyRanking { scores, selected: order })
}

/// Pixel-wise mean of the four acquired modalities at the given slice
/// indices. Inputs must already be normalized and resized to a common shape.
pub fn fuse_modalities(volumes: &[SliceVolume; 4], slice_indices: &[usize]) -> Result<SliceVolume> {
    let patient_id = volumes[0].patient_id.clone();
    if volumes.iter().any(|v| v.patient_id != patient_id) {
        return Err(Error::data("fusing volumes from different patients".to_string()));
    }
    let mut fused = Vec::with_capacity(slice_indices.len());
    for &idx in slice_indices {
        let parts: Vec<&Image> = volumes
            .iter()
            .map(|v| {
                v.slices().get(idx).ok_or_else(|| {
                    Error::index(format!(
                        "slice {idx} out of range for {}/{}",
                        v.patient_id,
                        v.modality.as_str()
                    ))
                })
            })
            .collect::<Result<_>>()?;
        let (h, w) = (parts[0].height(), parts[0].width());
        if parts.iter().any(|p| p.height() != h || p.width() != w) {
            return Err(Error::data(format!("modality dimensions differ at slice {idx}")));
        }
        let pixels = (0..h * w)
            .map(|j| parts.iter().map(|p| p.pixels()[j]).sum::<f64>() / 4.0)
            .collect();
        fused.push(Image::new(h, w, pixels)?);
    }
    SliceVolume::new(patient_id, Modality::Fused, fused)
}

/// Standardize to mean 0, population std 1; constant vectors map to zeros.
pub fn zscore(vector: &[f64]) -> Vec<f64> {
    let (mean, std) = mean_and_population_std(vector);
    if std == 0.0 {
        return vec![0.0; vector.len()];
    }
    vector.iter().map(|x| (x - mean) / std).collect()
}

/// The standard per-slice vectorization: normalize, resize to `target`,
/// flatten row-major, z-score. Feeds both PCA fitting and transform.
pub fn slice_vector(image: &Image, target: (usize, usize)) -> Result<Vec<f64>> {
    let prepared = resize_area(&minmax_normalize(image)?, target.0, target.1)?;
    Ok(zscore(prepared.pixels()))
}

/// Frozen PCA basis fitted on the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// d rows of length D, mutually orthonormal, each with its
    /// largest-magnitude entry positive.
    pub components: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
    pub d: usize,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix; returns
/// (eigenvalues, eigenvectors as columns). Plenty for D = 256.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = a.len();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let frob: f64 = a
        .iter()
        .flat_map(|r| r.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if frob == 0.0 {
        return Ok((vec![0.0; n], v));
    }
    let tol = 1e-14 * frob;
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(a[p][q].abs());
            }
        }
        if off <= tol {
            let eigenvalues = (0..n).map(|i| a[i][i]).collect();
            return Ok((eigenvalues, v));
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let tau = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for i in 0..n {
                    let aip = a[i][p];
                    let aiq = a[i][q];
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for i in 0..n {
                    let api = a[p][i];
                    let aqi = a[q][i];
                    a[p][i] = c * api - s * aqi;
                    a[q][i] = s * api + c * aqi;
                }
                for row in v.iter_mut() {
                    let vip = row[p];
                    let viq = row[q];
                    row[p] = c * vip - s * viq;
                    row[q] = s * vip + c * viq;
                }
            }
        }
    }
    Err(Error::contract("eigensolver did not converge in 100 sweeps".to_string()))
}

/// Fit on an n×D training matrix. Retained dimension is the smallest count
/// reaching `var_threshold` of total variance, capped by d_max, n-1, and D.
pub fn pca_fit(training: &[Vec<f64>], var_threshold: f64, d_max: usize) -> Result<PcaModel> {
    let n = training.len();
    if n < 2 {
        return Err(Error::data(format!("PCA needs at least 2 training rows, got {n}")));
    }
    if !(var_threshold > 0.0 && var_threshold <= 1.0) {
        return Err(Error::config(format!(
            "variance threshold must be in (0, 1], got {var_threshold}"
        )));
    }
    if d_max == 0 {
        return Err(Error::config("d_max must be >= 1".to_string()));
    }
    let dim = training[0].len();
    if dim == 0 || training.iter().any(|row| row.len() != dim) {
        return Err(Error::data("training rows have inconsistent lengths".to_string()));
    }

    let mut mean = vec![0.0; dim];
    for row in training {
        for (m, x) in mean.iter_mut().zip(row.iter()) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }

    let centered: Vec<Vec<f64>> = training
        .iter()
        .map(|row| row.iter().zip(mean.iter()).map(|(x, m)| x - m).collect())
        .collect();

    // Population covariance, D×D.
    let mut cov = vec![vec![0.0; dim]; dim];
    for row in &centered {
        for i in 0..dim {
            if row[i] == 0.0 {
                continue;
            }
            for j in i..dim {
                cov[i][j] += row[i] * row[j];
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            cov[i][j] /= n as f64;
            cov[j][i] = cov[i][j];
        }
    }

    let (eigenvalues, vectors) = jacobi_eigen(cov)?;
    let total: f64 = eigenvalues.iter().map(|l| l.max(0.0)).sum();
    if total == 0.0 {
        return Err(Error::data("training matrix has zero variance".to_string()));
    }

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eigenvalues[b]
            .partial_cmp(&eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let ratios: Vec<f64> = order
        .iter()
        .map(|&i| eigenvalues[i].max(0.0) / total)
        .collect();
    let mut cum = 0.0;
    let mut needed = dim;
    for (k, r) in ratios.iter().enumerate() {
        cum += r;
        if cum + 1e-12 >= var_threshold {
            needed = k + 1;
            break;
        }
    }
    let d = needed.min(d_max).min(n - 1).min(dim);

    let mut components = Vec::with_capacity(d);
    for &col in order.iter().take(d) {
        let mut comp: Vec<f64> = vectors.iter().map(|row| row[col]).collect();
        // Sign convention: the entry with the largest magnitude is positive.
        let lead = comp
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.abs().partial_cmp(&b.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if comp[lead] < 0.0 {
            for x in comp.iter_mut() {
                *x = -*x;
            }
        }
        components.push(comp);
    }

    Ok(PcaModel {
        mean,
        components,
        explained_variance_ratio: ratios.into_iter().take(d).collect(),
        d,
    })
}

/// Center by the training mean and project onto the retained components.
pub fn pca_transform(model: &PcaModel, vector: &[f64]) -> Result<Vec<f64>> {
    if vector.len() != model.mean.len() {
        return Err(Error::contract(format!(
            "vector length {} does not match PCA input dimension {}",
            vector.len(),
            model.mean.len()
        )));
    }
    Ok(model
        .components
        .iter()
        .map(|comp| {
            comp.iter()
                .zip(vector.iter().zip(model.mean.iter()))
                .map(|(c, (x, m))| c * (x - m))
                .sum()
        })
        .collect())
}

impl PcaModel {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "d = {}", self.d);
        let _ = writeln!(out, "input_dim = {}", self.mean.len());
        let join = |row: &[f64]| {
            row.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
        };
        let _ = writeln!(out, "[mean]");
        let _ = writeln!(out, "{}", join(&self.mean));
        let _ = writeln!(out, "[components]");
        for comp in &self.components {
            let _ = writeln!(out, "{}", join(comp));
        }
        let _ = writeln!(out, "[explained_variance_ratio]");
        let _ = writeln!(out, "{}", join(&self.explained_variance_ratio));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let mut header = |key: &str| -> Result<usize> {
            let line = lines
                .next()
                .ok_or_else(|| Error::data(format!("PCA file truncated before '{key}'")))?;
            let (k, val) = line
                .split_once('=')
                .ok_or_else(|| Error::data(format!("expected '{key} = ...', got '{line}'")))?;
            if k.trim() != key {
                return Err(Error::data(format!("expected '{key}', got '{}'", k.trim())));
            }
            val.trim()
                .parse::<usize>()
                .map_err(|_| Error::data(format!("bad {key} value")))
        };
        let d = header("d")?;
        let dim = header("input_dim")?;
        let mut rows = |name: &str, count: usize, len: usize| -> Result<Vec<Vec<f64>>> {
            let marker = lines
                .next()
                .ok_or_else(|| Error::data(format!("PCA file truncated before [{name}]")))?;
            if marker != format!("[{name}]") {
                return Err(Error::data(format!("expected block [{name}], got '{marker}'")));
            }
            (0..count)
                .map(|r| {
                    let line = lines
                        .next()
                        .ok_or_else(|| Error::data(format!("block [{name}] truncated at row {r}")))?;
                    let vals: Vec<f64> = line
                        .split_whitespace()
                        .map(|tok| {
                            tok.parse::<f64>()
                                .map_err(|_| Error::data(format!("bad float in [{name}]")))
                        })
                        .collect::<Result<_>>()?;
                    if vals.len() != len {
                        return Err(Error::data(format!(
                            "block [{name}] row {r} has {} values, expected {len}",
                            vals.len()
                        )));
                    }
                    Ok(vals)
                })
                .collect()
        };
        let mean = rows("mean", 1, dim)?.remove(0);
        let components = rows("components", d, dim)?;
        let explained_variance_ratio = rows("explained_variance_ratio", 1, d)?.remove(0);
        Ok(Self { mean, components, explained_variance_ratio, d })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::data::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::data(format!("reading {}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}

/// Rotation-angle payload of one slice; every entry is in [-π, π].
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        const SLACK: f64 = 1e-9;
        if values.is_empty() {
            return Err(Error::contract("feature vector is empty".to_string()));
        }
        if let Some(bad) = values
            .iter()
            .find(|x| !x.is_finite() || x.abs() > std::f64::consts::PI + SLACK)
        {
            return Err(Error::contract(format!(
                "feature value {bad} outside the angle range [-pi, pi]"
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Clip to [-clip, clip], then scale linearly so the clip boundary lands on
/// ±π. Monotone and odd.
pub fn angle_scale(vector: &[f64], clip: f64) -> Result<FeatureVector> {
    if !(clip > 0.0) || !clip.is_finite() {
        return Err(Error::config(format!("clip must be a positive number, got {clip}")));
    }
    let values = vector
        .iter()
        .map(|x| (x.clamp(-clip, clip) / clip) * std::f64::consts::PI)
        .collect();
    FeatureVector::new(values)
}
