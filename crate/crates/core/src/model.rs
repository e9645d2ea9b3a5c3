//! Forward pass of the classifier: trainable parameter bundle, circuit
//! readout, dense head, softmax, cross-entropy, and checkpoint IO.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::circuit::CircuitPlan;
use crate::error::{Error, Result};
use crate::noise::AngleNoise;
use crate::preprocess::FeatureVector;

/// All trainable scalars. Canonical flat order (used by `to_flat`,
/// `from_flat`, `init` draw order, and the checkpoint file) is:
/// conv_theta level-major, pool_phi level-major, w, v, dense_w row-major,
/// dense_b.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// Six shared conv-block angles per level.
    pub conv_theta: Vec<[f64; 6]>,
    /// Three shared pool-block angles per level.
    pub pool_phi: Vec<[f64; 3]>,
    /// Per-feature Ry scale.
    pub w: Vec<f64>,
    /// Per-feature Rz scale.
    pub v: Vec<f64>,
    /// Dense weights; row = expectation index, column = class.
    pub dense_w: [[f64; 2]; 4],
    pub dense_b: [f64; 2],
}

impl ModelParams {
    pub fn zeros(d: usize, levels: usize) -> Self {
        Self {
            conv_theta: vec![[0.0; 6]; levels],
            pool_phi: vec![[0.0; 3]; levels],
            w: vec![0.0; d],
            v: vec![0.0; d],
            dense_w: [[0.0; 2]; 4],
            dense_b: [0.0; 2],
        }
    }

    /// Seeded initialization: circuit angles Uniform(-π/8, π/8), feature
    /// scales Normal(0, 0.1), dense weights Uniform(-0.5, 0.5), biases zero.
    /// Draws happen in canonical flat order.
    pub fn init<R: Rng>(d: usize, levels: usize, rng: &mut R) -> Self {
        let eighth = std::f64::consts::FRAC_PI_8;
        let scale = Normal::new(0.0, 0.1).expect("fixed valid std");
        let mut params = Self::zeros(d, levels);
        for level in params.conv_theta.iter_mut() {
            for slot in level.iter_mut() {
                *slot = rng.random_range(-eighth..eighth);
            }
        }
        for level in params.pool_phi.iter_mut() {
            for slot in level.iter_mut() {
                *slot = rng.random_range(-eighth..eighth);
            }
        }
        for slot in params.w.iter_mut() {
            *slot = scale.sample(rng);
        }
        for slot in params.v.iter_mut() {
            *slot = scale.sample(rng);
        }
        for row in params.dense_w.iter_mut() {
            for slot in row.iter_mut() {
                *slot = rng.random_range(-0.5..0.5);
            }
        }
        params
    }

    pub fn d(&self) -> usize {
        self.w.len()
    }

    pub fn levels(&self) -> usize {
        self.conv_theta.len()
    }

    /// Total scalar count: 9·levels + 2·d + 10.
    pub fn count(d: usize, levels: usize) -> usize {
        9 * levels + 2 * d + 10
    }

    pub fn check_dims(&self, d: usize, levels: usize) -> Result<()> {
        if self.w.len() != d
            || self.v.len() != d
            || self.conv_theta.len() != levels
            || self.pool_phi.len() != levels
        {
            return Err(Error::contract(format!(
                "parameter shapes (d={}, levels={}) do not match plan (d={d}, levels={levels})",
                self.w.len(),
                self.conv_theta.len()
            )));
        }
        Ok(())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(Self::count(self.d(), self.levels()));
        for level in &self.conv_theta {
            flat.extend_from_slice(level);
        }
        for level in &self.pool_phi {
            flat.extend_from_slice(level);
        }
        flat.extend_from_slice(&self.w);
        flat.extend_from_slice(&self.v);
        for row in &self.dense_w {
            flat.extend_from_slice(row);
        }
        flat.extend_from_slice(&self.dense_b);
        flat
    }

    pub fn from_flat(d: usize, levels: usize, flat: &[f64]) -> Result<Self> {
        let expect = Self::count(d, levels);
        if flat.len() != expect {
            return Err(Error::contract(format!(
                "flat parameter vector has {} entries, expected {expect}",
                flat.len()
            )));
        }
        let mut params = Self::zeros(d, levels);
        let mut it = flat.iter().copied();
        let mut next = || it.next().expect("length checked above");
        for level in params.conv_theta.iter_mut() {
            for slot in level.iter_mut() {
                *slot = next();
            }
        }
        for level in params.pool_phi.iter_mut() {
            for slot in level.iter_mut() {
                *slot = next();
            }
        }
        for slot in params.w.iter_mut() {
            *slot = next();
        }
        for slot in params.v.iter_mut() {
            *slot = next();
        }
        for row in params.dense_w.iter_mut() {
            for slot in row.iter_mut() {
                *slot = next();
            }
        }
        for slot in params.dense_b.iter_mut() {
            *slot = next();
        }
        Ok(params)
    }
}

/// Result of one forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOutput {
    /// ⟨Z⟩ on the four readout qubits, ascending qubit index.
    pub expectations: [f64; 4],
    pub logits: [f64; 2],
    pub probs: [f64; 2],
}

/// Two-way softmax with max-subtraction; exact at extreme logits.
pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

/// Dense head on the expectation vector: z_j = Σ_i dense_w[i][j]·e_i + b_j.
pub fn dense_logits(expectations: &[f64; 4], params: &ModelParams) -> [f64; 2] {
    let mut logits = params.dense_b;
    for (row, &e) in params.dense_w.iter().zip(expectations.iter()) {
        logits[0] += row[0] * e;
        logits[1] += row[1] * e;
    }
    logits
}

/// Execute the plan, read the four lowest surviving qubits, apply the dense
/// head and softmax.
pub fn forward(
    features: &FeatureVector,
    params: &ModelParams,
    plan: &CircuitPlan,
    noise: Option<&mut AngleNoise>,
) -> Result<ForwardOutput> {
    let readout = plan.readout_qubits()?;
    let state = plan.execute(features, params, noise)?;
    let mut expectations = [0.0; 4];
    for (slot, &q) in expectations.iter_mut().zip(readout.iter()) {
        *slot = state.expectation_z(q)?;
    }
    let logits = dense_logits(&expectations, params);
    Ok(ForwardOutput {
        expectations,
        logits,
        probs: softmax2(logits),
    })
}

/// Cross-entropy against a hard label; probabilities are floored at 1e-12 so
/// a confident wrong answer stays finite. `label` must be 0 or 1.
pub fn cross_entropy(probs: &[f64; 2], label: usize) -> f64 {
    assert!(label < 2, "binary label expected");
    -probs[label].clamp(1e-12, 1.0).ln()
}

/// Element-wise forward over a batch; failures carry the offending index.
pub fn predict_batch(
    features_list: &[FeatureVector],
    params: &ModelParams,
    plan: &CircuitPlan,
    mut noise: Option<&mut AngleNoise>,
) -> Result<Vec<ForwardOutput>> {
    features_list
        .iter()
        .enumerate()
        .map(|(i, f)| {
            forward(f, params, plan, noise.as_deref_mut())
                .map_err(|e| e.prefixed(&format!("batch item {i}")))
        })
        .collect()
}

/// Parameters plus the run metadata needed to rebuild the preprocessing and
/// circuit they were trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub clip: f64,
    pub seed: u64,
}

impl Checkpoint {
    /// Plain-text encoding: a four-line header (d, levels, clip, seed), then
    /// named blocks in canonical order, one row of space-separated floats per
    /// line. Floats print in shortest round-trip form, so load is
    /// bit-exact.
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut out = String::new();
        let _ = writeln!(out, "d = {}", p.d());
        let _ = writeln!(out, "levels = {}", p.levels());
        let _ = writeln!(out, "clip = {}", self.clip);
        let _ = writeln!(out, "seed = {}", self.seed);
        let mut block = |name: &str, rows: &[&[f64]]| {
            let _ = writeln!(out, "[{name}]");
            for row in rows {
                let line = row
                    .iter()
                    .map(|x| x.to_string())
                    .collect::<Vec<_>>()
                    .join(" ");
                let _ = writeln!(out, "{line}");
            }
        };
        let theta_rows: Vec<&[f64]> = p.conv_theta.iter().map(|r| r.as_slice()).collect();
        block("conv_theta", &theta_rows);
        let phi_rows: Vec<&[f64]> = p.pool_phi.iter().map(|r| r.as_slice()).collect();
        block("pool_phi", &phi_rows);
        block("w", &[p.w.as_slice()]);
        block("v", &[p.v.as_slice()]);
        let dense_rows: Vec<&[f64]> = p.dense_w.iter().map(|r| r.as_slice()).collect();
        block("dense_w", &dense_rows);
        block("dense_b", &[p.dense_b.as_slice()]);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let mut header = |key: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| Error::data(format!("checkpoint truncated before '{key}'")))?;
            let (k, val) = line
                .split_once('=')
                .ok_or_else(|| Error::data(format!("expected '{key} = ...', got '{line}'")))?;
            if k.trim() != key {
                return Err(Error::data(format!(
                    "expected header '{key}', got '{}'",
                    k.trim()
                )));
            }
            Ok(val.trim().to_string())
        };
        let parse_usize = |s: String, key: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::data(format!("bad {key} '{s}'")))
        };
        let d = parse_usize(header("d")?, "d")?;
        let levels = parse_usize(header("levels")?, "levels")?;
        let clip = header("clip")?
            .parse::<f64>()
            .map_err(|_| Error::data("bad clip value".to_string()))?;
        let seed = header("seed")?
            .parse::<u64>()
            .map_err(|_| Error::data("bad seed value".to_string()))?;

        let mut block = |name: &str, rows: usize, cols: usize| -> Result<Vec<Vec<f64>>> {
            let marker = lines
                .next()
                .ok_or_else(|| Error::data(format!("checkpoint truncated before [{name}]")))?;
            if marker != format!("[{name}]") {
                return Err(Error::data(format!(
                    "expected block [{name}], got '{marker}'"
                )));
            }
            let mut out = Vec::with_capacity(rows);
            for r in 0..rows {
                let line = lines.next().ok_or_else(|| {
                    Error::data(format!("block [{name}] truncated at row {r}"))
                })?;
                let vals = line
                    .split_whitespace()
                    .map(|tok| {
                        tok.parse::<f64>()
                            .map_err(|_| Error::data(format!("bad float '{tok}' in [{name}]")))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                if vals.len() != cols {
                    return Err(Error::data(format!(
                        "block [{name}] row {r} has {} values, expected {cols}",
                        vals.len()
                    )));
                }
                out.push(vals);
            }
            Ok(out)
        };

        let mut params = ModelParams::zeros(d, levels);
        for (level, row) in params
            .conv_theta
            .iter_mut()
            .zip(block("conv_theta", levels, 6)?)
        {
            level.copy_from_slice(&row);
        }
        for (level, row) in params.pool_phi.iter_mut().zip(block("pool_phi", levels, 3)?) {
            level.copy_from_slice(&row);
        }
        params.w = block("w", 1, d)?.remove(0);
        params.v = block("v", 1, d)?.remove(0);
        for (dst, row) in params.dense_w.iter_mut().zip(block("dense_w", 4, 2)?) {
            dst.copy_from_slice(&row);
        }
        params.dense_b.copy_from_slice(&block("dense_b", 1, 2)?[0]);

        Ok(Self { params, clip, seed })
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
