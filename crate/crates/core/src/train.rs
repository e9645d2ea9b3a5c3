//! Gradient computation and the training loop.
//!
//! Rotation-angle gradients come from the parameter-shift rule by default:
//! every trainable gate instance is evaluated at its angle +/- pi/2 and the
//! half-difference of readout expectations, weighted by the loss gradient at
//! the dense head, gives that instance's contribution. Instances sharing one
//! parameter sum; encoding instances chain through the feature value. An
//! adjoint mode computes the same derivatives in two sweeps for large
//! registers, and central finite differences serve as the reference oracle.

use rand::seq::SliceRandom;

use crate::circuit::{Binding, CircuitPlan, Gate};
use crate::data::SliceSample;
use crate::error::{Error, Result};
use crate::model::{
    cross_entropy, dense_logits, forward, softmax2, ModelParams,
};
use crate::noise::AngleNoise;
use crate::preprocess::FeatureVector;
use crate::rng::{stream, tag};
use crate::statevec::StateVector;
use num_complex::Complex64;

/// Validation-loss improvements smaller than this count as a plateau.
pub const MIN_DELTA: f64 = 1e-4;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradMethod {
    /// Exact derivatives via angle shifts of +/- pi/2, two circuit runs per
    /// trainable gate instance.
    ParameterShift,
    /// Central differences over the flat parameter vector, h = 1e-4. The
    /// correctness oracle; not meant for production training.
    FiniteDiff,
    /// Reverse-sweep derivatives in O(gates) circuit work. Matches
    /// parameter-shift to machine precision.
    Adjoint,
}

impl GradMethod {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "parameter-shift" => Ok(GradMethod::ParameterShift),
            "finite-diff" => Ok(GradMethod::FiniteDiff),
            "adjoint" => Ok(GradMethod::Adjoint),
            other => Err(Error::config(format!(
                "unknown gradient method {other:?}, expected parameter-shift, finite-diff or adjoint"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            GradMethod::ParameterShift => "parameter-shift",
            GradMethod::FiniteDiff => "finite-diff",
            GradMethod::Adjoint => "adjoint",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    /// Multiplier applied to the learning rate on a plateau, in (0, 1).
    pub lr_factor: f64,
    /// Non-improving epochs tolerated before the learning rate drops.
    pub lr_patience: usize,
    /// Non-improving epochs tolerated before training stops.
    pub early_stop_patience: usize,
    pub gate_noise_sigma: f64,
    pub grad_method: GradMethod,
    pub seed: u64,
}

impl TrainConfig {
    pub fn defaults(seed: u64) -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 16,
            lr_init: 3e-3,
            lr_min: 2e-4,
            lr_factor: 0.5,
            lr_patience: 3,
            early_stop_patience: 5,
            gate_noise_sigma: 0.0,
            grad_method: GradMethod::ParameterShift,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1".to_string()));
        }
        if !self.lr_init.is_finite() || self.lr_init <= 0.0 {
            return Err(Error::config(format!("lr_init {} must be positive", self.lr_init)));
        }
        if !self.lr_min.is_finite() || self.lr_min <= 0.0 || self.lr_min > self.lr_init {
            return Err(Error::config(format!(
                "lr_min {} must be positive and at most lr_init {}",
                self.lr_min, self.lr_init
            )));
        }
        if !self.lr_factor.is_finite() || self.lr_factor <= 0.0 || self.lr_factor >= 1.0 {
            return Err(Error::config(format!(
                "lr_factor {} must lie in (0, 1)",
                self.lr_factor
            )));
        }
        if self.lr_patience == 0 || self.early_stop_patience == 0 {
            return Err(Error::config("patience values must be at least 1".to_string()));
        }
        if !self.gate_noise_sigma.is_finite() || self.gate_noise_sigma < 0.0 {
            return Err(Error::config(format!(
                "gate noise sigma {} must be finite and non-negative",
                self.gate_noise_sigma
            )));
        }
        Ok(())
    }
}

/// Adam with bias correction. State length is fixed at construction and
/// must match the flat parameter vector on every step.
#[derive(Clone, Debug)]
pub struct AdamState {
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::contract(format!(
                "adam state holds {} slots, got {} params and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grads[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        Ok(())
    }
}

/// Loss gradient with the same shape as the parameters.
pub fn gradient(
    features: &FeatureVector,
    label: usize,
    params: &ModelParams,
    plan: &CircuitPlan,
    method: GradMethod,
    noise: Option<&mut AngleNoise>,
) -> Result<ModelParams> {
    if label > 1 {
        return Err(Error::data(format!("label {label} outside {{0, 1}}")));
    }
    match method {
        GradMethod::ParameterShift => shift_gradient(features, label, params, plan, noise),
        GradMethod::FiniteDiff => finite_diff_gradient(features, label, params, plan, noise),
        GradMethod::Adjoint => adjoint_gradient(features, label, params, plan, noise),
    }
}

fn readout_expectations(state: &StateVector, readout: &[usize; 4]) -> Result<[f64; 4]> {
    let mut e = [0.0; 4];
    for (slot, &q) in e.iter_mut().zip(readout.iter()) {
        *slot = state.expectation_z(q)?;
    }
    Ok(e)
}

/// Fill the dense-layer gradients in place and return the loss gradient
/// with respect to the four readout expectations.
fn dense_backward(
    e: &[f64; 4],
    probs: [f64; 2],
    label: usize,
    params: &ModelParams,
    grads: &mut ModelParams,
) -> [f64; 4] {
    let delta = [
        probs[0] - f64::from(label == 0),
        probs[1] - f64::from(label == 1),
    ];
    grads.dense_b = delta;
    for i in 0..4 {
        for j in 0..2 {
            grads.dense_w[i][j] = e[i] * delta[j];
        }
    }
    let mut c = [0.0; 4];
    for i in 0..4 {
        for j in 0..2 {
            c[i] += params.dense_w[i][j] * delta[j];
        }
    }
    c
}

/// Route one gate instance's angle derivative into its parameter slot.
/// Raw-feature bindings carry no trainable parameter; encoding weights
/// chain through the feature value; shared block parameters accumulate.
fn accumulate_binding(grads: &mut ModelParams, binding: Binding, g: f64, x: &[f64]) {
    match binding {
        Binding::Feature(_) => {}
        Binding::FeatureTimesW(i) => grads.w[i] += g * x[i],
        Binding::FeatureTimesV(i) => grads.v[i] += g * x[i],
        Binding::ConvTheta { level, index } => grads.conv_theta[level][index] += g,
        Binding::PoolPhi { level, index } => grads.pool_phi[level][index] += g,
    }
}

fn shift_gradient(
    features: &FeatureVector,
    label: usize,
    params: &ModelParams,
    plan: &CircuitPlan,
    mut noise: Option<&mut AngleNoise>,
) -> Result<ModelParams> {
    let readout = plan.readout_qubits()?;
    let base = plan.resolve_angles(features, params, noise.as_deref_mut())?;
    let state = plan.apply_resolved(&base)?;
    let e = readout_expectations(&state, &readout)?;
    let probs = softmax2(dense_logits(&e, params));
    let mut grads = ModelParams::zeros(plan.n_qubits(), plan.levels());
    let c = dense_backward(&e, probs, label, params, &mut grads);
    if c.iter().all(|&v| v == 0.0) {
        return Ok(grads);
    }

    let half_pi = std::f64::consts::FRAC_PI_2;
    for (k, gate) in plan.gates().iter().enumerate() {
        let binding = match gate {
            Gate::Ry { binding, .. } | Gate::Rz { binding, .. } => *binding,
            Gate::Cnot { .. } => continue,
        };
        let shifted = |delta: f64, noise: Option<&mut AngleNoise>| -> Result<[f64; 4]> {
            // fresh noise draws per evaluation when enabled
            let mut angles = match noise {
                Some(n) => plan.resolve_angles(features, params, Some(n))?,
                None => base.clone(),
            };
            let a = angles[k].ok_or_else(|| Error::contract("shift of a parameter-free gate".to_string()))?;
            angles[k] = Some(a + delta);
            readout_expectations(&plan.apply_resolved(&angles)?, &readout)
        };
        let e_plus = shifted(half_pi, noise.as_deref_mut())?;
        let e_minus = shifted(-half_pi, noise.as_deref_mut())?;
        let g: f64 = (0..4).map(|i| c[i] * (e_plus[i] - e_minus[i]) / 2.0).sum();
        accumulate_binding(&mut grads, binding, g, features.values());
    }
    Ok(grads)
}

/// ⟨lam| Y_q |phi⟩ without materializing the operator.
fn cross_y(lam: &[Complex64], phi: &[Complex64], qubit: usize) -> Complex64 {
    let mask = 1usize << qubit;
    let i_unit = Complex64::new(0.0, 1.0);
    let mut acc = Complex64::new(0.0, 0.0);
    for lo in 0..lam.len() {
        if lo & mask == 0 {
            let hi = lo | mask;
            acc += lam[lo].conj() * (-i_unit * phi[hi]) + lam[hi].conj() * (i_unit * phi[lo]);
        }
    }
    acc
}

/// ⟨lam| Z_q |phi⟩.
fn cross_z(lam: &[Complex64], phi: &[Complex64], qubit: usize) -> Complex64 {
    let mask = 1usize << qubit;
    let mut acc = Complex64::new(0.0, 0.0);
    for (b, (l, p)) in lam.iter().zip(phi.iter()).enumerate() {
        let term = l.conj() * p;
        if b & mask == 0 {
            acc += term;
        } else {
            acc -= term;
        }
    }
    acc
}

/// Reverse sweep: with G = exp(-i a P / 2), dE/da = Im ⟨lam_k| P |phi_k⟩
/// where phi_k is the state after gate k and lam_k the readout operator
/// pulled back through the gates above k. One forward pass, one backward
/// pass, two live vectors.
fn adjoint_gradient(
    features: &FeatureVector,
    label: usize,
    params: &ModelParams,
    plan: &CircuitPlan,
    noise: Option<&mut AngleNoise>,
) -> Result<ModelParams> {
    let readout = plan.readout_qubits()?;
    let angles = plan.resolve_angles(features, params, noise)?;
    let psi = plan.apply_resolved(&angles)?;
    let e = readout_expectations(&psi, &readout)?;
    let probs = softmax2(dense_logits(&e, params));
    let mut grads = ModelParams::zeros(plan.n_qubits(), plan.levels());
    let c = dense_backward(&e, probs, label, params, &mut grads);
    if c.iter().all(|&v| v == 0.0) {
        return Ok(grads);
    }

    // lam = (sum_i c_i Z_{q_i}) psi, diagonal in the computational basis
    let mut lam = psi.clone();
    for (b, amp) in lam.amplitudes_mut().iter_mut().enumerate() {
        let mut coef = 0.0;
        for (slot, &q) in readout.iter().enumerate() {
            coef += if b >> q & 1 == 0 { c[slot] } else { -c[slot] };
        }
        *amp *= coef;
    }

    let mut phi = psi;
    for (k, gate) in plan.gates().iter().enumerate().rev() {
        match *gate {
            Gate::Cnot { control, target } => {
                phi.apply_cnot(control, target)?;
                lam.apply_cnot(control, target)?;
            }
            Gate::Ry { qubit, binding } => {
                let a = angles[k]
                    .ok_or_else(|| Error::contract("rotation gate resolved to no angle".to_string()))?;
                let g = cross_y(lam.amplitudes(), phi.amplitudes(), qubit).im;
                accumulate_binding(&mut grads, binding, g, features.values());
                phi.apply_ry(qubit, -a)?;
                lam.apply_ry(qubit, -a)?;
            }
            Gate::Rz { qubit, binding } => {
                let a = angles[k]
                    .ok_or_else(|| Error::contract("rotation gate resolved to no angle".to_string()))?;
                let g = cross_z(lam.amplitudes(), phi.amplitudes(), qubit).im;
                accumulate_binding(&mut grads, binding, g, features.values());
                phi.apply_rz(qubit, -a)?;
                lam.apply_rz(qubit, -a)?;
            }
        }
    }
    Ok(grads)
}

fn finite_diff_gradient(
    features: &FeatureVector,
    label: usize,
    params: &ModelParams,
    plan: &CircuitPlan,
    mut noise: Option<&mut AngleNoise>,
) -> Result<ModelParams> {
    const H: f64 = 1e-4;
    let d = plan.n_qubits();
    let levels = plan.levels();
    let flat = params.to_flat();
    let mut grads = vec![0.0; flat.len()];
    let loss_at = |theta: &[f64], noise: Option<&mut AngleNoise>| -> Result<f64> {
        let p = ModelParams::from_flat(d, levels, theta)?;
        let out = forward(features, &p, plan, noise)?;
        Ok(cross_entropy(&out.probs, label))
    };
    let mut probe = flat.clone();
    for j in 0..flat.len() {
        probe[j] = flat[j] + H;
        let plus = loss_at(&probe, noise.as_deref_mut())?;
        probe[j] = flat[j] - H;
        let minus = loss_at(&probe, noise.as_deref_mut())?;
        probe[j] = flat[j];
        grads[j] = (plus - minus) / (2.0 * H);
    }
    ModelParams::from_flat(d, levels, &grads)
}

/// Learning-rate plateau schedule with early stopping, driven by the
/// validation loss once per epoch.
#[derive(Clone, Debug)]
pub struct PlateauSchedule {
    lr: f64,
    lr_min: f64,
    factor: f64,
    lr_patience: usize,
    stop_patience: usize,
    best: f64,
    lr_wait: usize,
    stop_wait: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlateauStep {
    /// New best validation loss; callers snapshot parameters here.
    Improved,
    Waiting,
    /// Early-stop patience exhausted.
    Stop,
}

impl PlateauSchedule {
    pub fn new(config: &TrainConfig) -> Self {
        PlateauSchedule {
            lr: config.lr_init,
            lr_min: config.lr_min,
            factor: config.lr_factor,
            lr_patience: config.lr_patience,
            stop_patience: config.early_stop_patience,
            best: f64::INFINITY,
            lr_wait: 0,
            stop_wait: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn observe(&mut self, val_loss: f64) -> PlateauStep {
        if val_loss < self.best - MIN_DELTA {
            self.best = val_loss;
            self.lr_wait = 0;
            self.stop_wait = 0;
            return PlateauStep::Improved;
        }
        self.lr_wait += 1;
        self.stop_wait += 1;
        if self.lr_wait >= self.lr_patience {
            self.lr = (self.lr * self.factor).max(self.lr_min);
            self.lr_wait = 0;
        }
        if self.stop_wait >= self.stop_patience {
            return PlateauStep::Stop;
        }
        PlateauStep::Waiting
    }
}

/// Slice-level samples after the train/val split.
#[derive(Clone, Debug)]
pub struct SplitSamples {
    pub train: Vec<SliceSample>,
    pub val: Vec<SliceSample>,
}

impl SplitSamples {
    fn validate(&self, plan: &CircuitPlan) -> Result<()> {
        for (name, split) in [("train", &self.train), ("val", &self.val)] {
            if split.is_empty() {
                return Err(Error::data(format!("{name} split is empty")));
            }
            for s in split {
                if s.label > 1 {
                    return Err(Error::data(format!(
                        "{name} sample {} slice {} has label {}",
                        s.patient_id, s.slice_index, s.label
                    )));
                }
                if s.features.len() != plan.n_qubits() {
                    return Err(Error::contract(format!(
                        "{name} sample {} slice {} has {} features, plan expects {}",
                        s.patient_id,
                        s.slice_index,
                        s.features.len(),
                        plan.n_qubits()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate the epoch's updates actually used.
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    /// 1-based last epoch that ran.
    pub stop_epoch: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc,lr\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.lr
            ));
        }
        out
    }
}

/// Mean loss and accuracy over a sample list with the current parameters.
/// Probability ties predict class 0.
pub fn evaluate_epoch(
    samples: &[SliceSample],
    params: &ModelParams,
    plan: &CircuitPlan,
) -> Result<(f64, f64)> {
    evaluate_epoch_with_noise(samples, params, plan, 0.0, 0, &[])
}

/// As `evaluate_epoch`, with per-sample gate-noise streams keyed by
/// `(seed, context..., sample index)`. Zero sigma is the clean path.
pub fn evaluate_epoch_with_noise(
    samples: &[SliceSample],
    params: &ModelParams,
    plan: &CircuitPlan,
    sigma: f64,
    seed: u64,
    context: &[u64],
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::data("cannot evaluate an empty sample list".to_string()));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (i, s) in samples.iter().enumerate() {
        let mut path = context.to_vec();
        path.push(i as u64);
        let mut noise = AngleNoise::new(sigma, stream(seed, &path))?;
        let out = forward(&s.features, params, plan, noise.as_mut())?;
        loss += cross_entropy(&out.probs, s.label as usize);
        let predicted = u8::from(out.probs[1] > out.probs[0]);
        if predicted == s.label {
            correct += 1;
        }
    }
    let n = samples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Run the full loop: seeded init, seeded per-epoch shuffle, batch-mean
/// gradients through Adam, plateau learning-rate decay, early stopping, and
/// restoration of the best-validation parameters.
pub fn train(
    data: &SplitSamples,
    plan: &CircuitPlan,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    data.validate(plan)?;
    let d = plan.n_qubits();
    let levels = plan.levels();
    plan.readout_qubits()?;

    let mut params = ModelParams::init(d, levels, &mut stream(config.seed, &[tag::INIT]));
    let mut adam = AdamState::new(ModelParams::count(d, levels));
    let mut schedule = PlateauSchedule::new(config);
    let mut best_params = params.clone();
    let mut best_epoch = 0usize;
    let mut records = Vec::with_capacity(config.epochs);
    let mut stop_epoch = 0usize;
    let sigma = config.gate_noise_sigma;

    for epoch in 1..=config.epochs {
        let lr = schedule.lr();
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut stream(config.seed, &[tag::SHUFFLE, epoch as u64]));

        for batch in order.chunks(config.batch_size) {
            let mut mean_grad = vec![0.0; ModelParams::count(d, levels)];
            for &idx in batch {
                let s = &data.train[idx];
                let mut noise = AngleNoise::new(
                    sigma,
                    stream(config.seed, &[tag::GATE_NOISE_GRAD, epoch as u64, idx as u64]),
                )?;
                let g = gradient(
                    &s.features,
                    s.label as usize,
                    &params,
                    plan,
                    config.grad_method,
                    noise.as_mut(),
                )?;
                for (acc, gi) in mean_grad.iter_mut().zip(g.to_flat()) {
                    *acc += gi;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for gi in mean_grad.iter_mut() {
                *gi *= scale;
            }
            let mut flat = params.to_flat();
            adam.step(&mut flat, &mean_grad, lr)?;
            params = ModelParams::from_flat(d, levels, &flat)?;
        }

        let (train_loss, train_acc) = evaluate_epoch_with_noise(
            &data.train,
            &params,
            plan,
            sigma,
            config.seed,
            &[tag::GATE_NOISE_EVAL, 0, epoch as u64],
        )?;
        let (val_loss, val_acc) = evaluate_epoch_with_noise(
            &data.val,
            &params,
            plan,
            sigma,
            config.seed,
            &[tag::GATE_NOISE_EVAL, 1, epoch as u64],
        )?;
        records.push(EpochRecord {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
            lr,
        });
        stop_epoch = epoch;
        match schedule.observe(val_loss) {
            PlateauStep::Improved => {
                best_params = params.clone();
                best_epoch = epoch;
            }
            PlateauStep::Waiting => {}
            PlateauStep::Stop => break,
        }
    }

    Ok((
        best_params,
        TrainHistory {
            records,
            best_epoch,
            stop_epoch,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{build_conv_block, build_encoding_layer, build_ring_conv_layer};
    use rand::Rng;

    fn feature_vec(values: Vec<f64>) -> FeatureVector {
        FeatureVector::new(values).unwrap()
    }

    fn random_features<R: Rng>(d: usize, rng: &mut R) -> FeatureVector {
        feature_vec((0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
    }

    /// Relative 1e-4 with an absolute floor of 1e-6 near zero.
    fn grad_close(a: f64, b: f64) -> bool {
        let diff = (a - b).abs();
        diff <= 1e-6 || diff <= 1e-4 * a.abs().max(b.abs())
    }

    #[test]
    fn adam_first_step_matches_hand_value() {
        let mut adam = AdamState::new(1);
        let mut p = [0.0];
        adam.step(&mut p, &[1.0], 0.1).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-6, "got {}", p[0]);
    }

    #[test]
    fn adam_opposing_gradients_stay_bounded() {
        let mut adam = AdamState::new(1);
        let mut p = [0.0];
        adam.step(&mut p, &[1.0], 0.1).unwrap();
        adam.step(&mut p, &[-1.0], 0.1).unwrap();
        assert!(p[0].abs() < 0.2, "got {}", p[0]);
        assert!(p[0] < 0.0, "first step dominates");
    }

    #[test]
    fn adam_zero_gradient_from_fresh_state_is_identity() {
        let mut adam = AdamState::new(3);
        let mut p = [0.4, -1.0, 2.5];
        let before = p;
        for _ in 0..5 {
            adam.step(&mut p, &[0.0; 3], 0.1).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn adam_rejects_mismatched_lengths() {
        let mut adam = AdamState::new(2);
        let mut p = [0.0];
        assert!(adam.step(&mut p, &[1.0], 0.1).is_err());
    }

    #[test]
    fn shift_rule_recovers_sine_derivative() {
        // d<Z>/dtheta of Ry(theta)|0> is -sin(theta); the +/- pi/2 rule is
        // exact for a single rotation generator
        let half_pi = std::f64::consts::FRAC_PI_2;
        for k in 0..25 {
            let theta = -3.0 + 0.25 * k as f64;
            let z_at = |a: f64| {
                let mut s = StateVector::zero(1).unwrap();
                s.apply_ry(0, a).unwrap();
                s.expectation_z(0).unwrap()
            };
            let shift = (z_at(theta + half_pi) - z_at(theta - half_pi)) / 2.0;
            assert!((shift + theta.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_dense_head_zeroes_quantum_gradients() {
        let plan = CircuitPlan::build(8, 1).unwrap();
        let mut rng = stream(11, &[1]);
        let mut params = ModelParams::init(8, 1, &mut rng);
        params.dense_w = [[0.0; 2]; 4];
        let features = random_features(8, &mut rng);
        for method in [GradMethod::ParameterShift, GradMethod::Adjoint] {
            let g = gradient(&features, 1, &params, &plan, method, None).unwrap();
            assert!(g.w.iter().chain(g.v.iter()).all(|&x| x == 0.0));
            assert!(g.conv_theta[0].iter().all(|&x| x == 0.0));
            assert!(g.pool_phi[0].iter().all(|&x| x == 0.0));
            // logits collapse to the zero bias, probs to 1/2
            assert_eq!(g.dense_b, [0.5, -0.5]);
        }
    }

    #[test]
    fn shift_finite_diff_and_adjoint_agree_at_d8() {
        let plan = CircuitPlan::build(8, 1).unwrap();
        for seed in 0..20u64 {
            let mut rng = stream(seed, &[7]);
            let params = ModelParams::init(8, 1, &mut rng);
            let features = random_features(8, &mut rng);
            let label = (seed % 2) as usize;
            let shift = gradient(&features, label, &params, &plan, GradMethod::ParameterShift, None)
                .unwrap()
                .to_flat();
            let fd = gradient(&features, label, &params, &plan, GradMethod::FiniteDiff, None)
                .unwrap()
                .to_flat();
            let adj = gradient(&features, label, &params, &plan, GradMethod::Adjoint, None)
                .unwrap()
                .to_flat();
            assert_eq!(shift.len(), 35);
            for j in 0..shift.len() {
                assert!(
                    grad_close(shift[j], fd[j]),
                    "seed {seed} param {j}: shift {} vs fd {}",
                    shift[j],
                    fd[j]
                );
                assert!(
                    (shift[j] - adj[j]).abs() < 1e-9,
                    "seed {seed} param {j}: shift {} vs adjoint {}",
                    shift[j],
                    adj[j]
                );
            }
        }
    }

    #[test]
    fn shared_parameter_gradient_sums_instance_contributions() {
        // ring layer on 4 qubits: blocks (0,1) (2,3) (1,2) (3,0); tie all
        // four to level 0, then untie into one level per block and check the
        // tied gradient equals the sum over untied levels
        let edges = [(0usize, 1usize), (2, 3), (1, 2), (3, 0)];
        let mut tied_gates = build_encoding_layer(4);
        tied_gates.extend(build_ring_conv_layer(&[0, 1, 2, 3], 0).unwrap());
        let tied_plan = CircuitPlan::from_gates(4, tied_gates).unwrap();

        let mut untied_gates = build_encoding_layer(4);
        for (level, (q1, q2)) in edges.iter().enumerate() {
            untied_gates.extend(build_conv_block(*q1, *q2, level).unwrap());
        }
        let untied_plan = CircuitPlan::from_gates(4, untied_gates).unwrap();
        assert_eq!(untied_plan.levels(), 4);

        let mut rng = stream(31, &[5]);
        let tied_params = ModelParams::init(4, 1, &mut rng);
        let mut untied_params = ModelParams::zeros(4, 4);
        for level in 0..4 {
            untied_params.conv_theta[level] = tied_params.conv_theta[0];
        }
        untied_params.w = tied_params.w.clone();
        untied_params.v = tied_params.v.clone();
        untied_params.dense_w = tied_params.dense_w;
        untied_params.dense_b = tied_params.dense_b;

        let features = random_features(4, &mut rng);
        for method in [GradMethod::ParameterShift, GradMethod::Adjoint] {
            let tied = gradient(&features, 1, &tied_params, &tied_plan, method, None).unwrap();
            let untied = gradient(&features, 1, &untied_params, &untied_plan, method, None).unwrap();
            for j in 0..6 {
                let summed: f64 = (0..4).map(|l| untied.conv_theta[l][j]).sum();
                assert!(
                    (tied.conv_theta[0][j] - summed).abs() < 1e-12,
                    "theta {j}: tied {} vs summed {}",
                    tied.conv_theta[0][j],
                    summed
                );
            }
            for i in 0..4 {
                assert!((tied.w[i] - untied.w[i]).abs() < 1e-12);
                assert!((tied.v[i] - untied.v[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encoding_gradient_chains_through_feature_value() {
        // w[i] reaches its gate as w[i]*x[i], so the parameter gradient is
        // the instance gradient scaled by x[i]; doubling x must not merely
        // double the gradient (the angle moved too), but zero x must kill it
        let plan = CircuitPlan::build(8, 1).unwrap();
        let mut rng = stream(77, &[3]);
        let params = ModelParams::init(8, 1, &mut rng);
        let mut values = vec![0.0; 8];
        for v in values.iter_mut().skip(1) {
            *v = rng.random_range(-2.0..2.0);
        }
        let features = feature_vec(values);
        let g = gradient(&features, 0, &params, &plan, GradMethod::ParameterShift, None).unwrap();
        assert_eq!(g.w[0], 0.0);
        assert_eq!(g.v[0], 0.0);
    }

    #[test]
    fn gradient_step_descends_loss() {
        let plan = CircuitPlan::build(8, 1).unwrap();
        for seed in 0..20u64 {
            let mut rng = stream(seed, &[13]);
            let params = ModelParams::init(8, 1, &mut rng);
            let batch: Vec<(FeatureVector, usize)> = (0..4)
                .map(|i| (random_features(8, &mut rng), i % 2))
                .collect();
            let loss_of = |p: &ModelParams| -> f64 {
                batch
                    .iter()
                    .map(|(f, y)| {
                        cross_entropy(&forward(f, p, &plan, None).unwrap().probs, *y)
                    })
                    .sum::<f64>()
                    / batch.len() as f64
            };
            let mut mean_grad = vec![0.0; ModelParams::count(8, 1)];
            for (f, y) in &batch {
                let g = gradient(f, *y, &params, &plan, GradMethod::Adjoint, None).unwrap();
                for (acc, gi) in mean_grad.iter_mut().zip(g.to_flat()) {
                    *acc += gi;
                }
            }
            for gi in mean_grad.iter_mut() {
                *gi /= batch.len() as f64;
            }
            let before = loss_of(&params);
            let mut flat = params.to_flat();
            AdamState::new(flat.len()).step(&mut flat, &mean_grad, 1e-3).unwrap();
            let after = loss_of(&ModelParams::from_flat(8, 1, &flat).unwrap());
            assert!(
                after <= before + 1e-6,
                "seed {seed}: loss rose {before} -> {after}"
            );
        }
    }

    #[test]
    fn gradient_with_noise_is_stream_deterministic() {
        let plan = CircuitPlan::build(8, 1).unwrap();
        let mut rng = stream(3, &[9]);
        let params = ModelParams::init(8, 1, &mut rng);
        let features = random_features(8, &mut rng);
        let grad_with = |path: &[u64]| {
            let mut noise = AngleNoise::new(0.05, stream(40, path)).unwrap();
            gradient(
                &features,
                1,
                &params,
                &plan,
                GradMethod::ParameterShift,
                noise.as_mut(),
            )
            .unwrap()
            .to_flat()
        };
        assert_eq!(grad_with(&[1, 2]), grad_with(&[1, 2]));
        assert_ne!(grad_with(&[1, 2]), grad_with(&[1, 3]));
    }

    #[test]
    fn plateau_schedule_halves_once_after_patience() {
        let mut config = TrainConfig::defaults(0);
        config.lr_init = 8e-4;
        config.lr_patience = 3;
        config.early_stop_patience = 100;
        let mut s = PlateauSchedule::new(&config);
        assert_eq!(s.observe(1.0), PlateauStep::Improved);
        // four flat epochs: the cut fires at the third, not again at the fourth
        assert_eq!(s.observe(1.0), PlateauStep::Waiting);
        assert_eq!(s.lr(), 8e-4);
        s.observe(1.0);
        assert_eq!(s.lr(), 8e-4);
        s.observe(1.0);
        assert_eq!(s.lr(), 4e-4);
        s.observe(1.0);
        assert_eq!(s.lr(), 4e-4);
        // an improvement under min-delta is still a plateau
        assert_eq!(s.observe(1.0 - 0.5 * MIN_DELTA), PlateauStep::Waiting);
        s.observe(1.0);
        assert_eq!(s.lr(), 2e-4);
        // floor: further patience cycles cannot go below lr_min
        for _ in 0..6 {
            s.observe(1.0);
        }
        assert_eq!(s.lr(), config.lr_min);
    }

    #[test]
    fn plateau_schedule_stops_after_patience() {
        let mut config = TrainConfig::defaults(0);
        config.early_stop_patience = 5;
        let mut s = PlateauSchedule::new(&config);
        s.observe(1.0);
        s.observe(0.8);
        for _ in 0..4 {
            assert_eq!(s.observe(0.8), PlateauStep::Waiting);
        }
        assert_eq!(s.observe(0.8), PlateauStep::Stop);
    }

    fn toy_split(d: usize, n_train: usize, n_val: usize, seed: u64) -> SplitSamples {
        // class signal on qubit 4: <Z_4> at small circuit angles tracks
        // cos(x_4), far apart for 0.1 vs 3.0
        let mut rng = stream(seed, &[99]);
        let mut make = |n: usize, split: usize| -> Vec<SliceSample> {
            (0..n)
                .map(|i| {
                    let label = (i % 2) as u8;
                    let mut values: Vec<f64> =
                        (0..d).map(|_| rng.random_range(-0.3..0.3)).collect();
                    values[4] = if label == 0 { 0.1 } else { 3.0 };
                    SliceSample {
                        patient_id: format!("p{split}{i:03}"),
                        slice_index: i,
                        label,
                        features: feature_vec(values),
                    }
                })
                .collect()
        };
        SplitSamples {
            train: make(n_train, 0),
            val: make(n_val, 1),
        }
    }

    #[test]
    fn training_learns_separable_toy_and_restores_best() {
        let plan = CircuitPlan::build(8, 1).unwrap();
        let data = toy_split(8, 24, 8, 5);
        let mut config = TrainConfig::defaults(42);
        config.epochs = 40;
        config.batch_size = 8;
        // short run, few optimizer steps: give them more reach than the
        // production defaults
        config.lr_init = 2e-2;
        config.lr_min = 1e-3;
        config.early_stop_patience = 8;
        let (params, history) = train(&data, &plan, &config).unwrap();
        assert!(!history.records.is_empty());
        assert_eq!(history.records.len(), history.stop_epoch);
        let (_, train_acc) = evaluate_epoch(&data.train, &params, &plan).unwrap();
        assert!(train_acc >= 0.9, "train accuracy {train_acc}");

        // returned parameters are exactly the best-epoch snapshot
        assert!(history.best_epoch >= 1);
        let best_record = history.records[history.best_epoch - 1];
        let (val_loss, _) = evaluate_epoch(&data.val, &params, &plan).unwrap();
        assert_eq!(val_loss, best_record.val_loss);

        // learning rate never leaves [lr_min, lr_init]
        for r in &history.records {
            assert!(r.lr >= config.lr_min && r.lr <= config.lr_init);
        }
    }

    #[test]
    fn training_is_bit_reproducible() {
        let plan = CircuitPlan::build(8, 1).unwrap();
        let data = toy_split(8, 12, 4, 6);
        let mut config = TrainConfig::defaults(9);
        config.epochs = 4;
        config.batch_size = 4;
        let (p1, h1) = train(&data, &plan, &config).unwrap();
        let (p2, h2) = train(&data, &plan, &config).unwrap();
        assert_eq!(p1.to_flat(), p2.to_flat());
        assert_eq!(h1, h2);

        let mut other = config.clone();
        other.seed = 10;
        let (_, h3) = train(&data, &plan, &other).unwrap();
        assert_ne!(h1.records, h3.records);
    }

    #[test]
    fn gate_noise_changes_training() {
        let plan = CircuitPlan::build(8, 1).unwrap();
        let data = toy_split(8, 8, 4, 2);
        let mut clean = TrainConfig::defaults(3);
        clean.epochs = 2;
        clean.batch_size = 8;
        let mut noisy = clean.clone();
        noisy.gate_noise_sigma = 0.05;
        let (_, h_clean) = train(&data, &plan, &clean).unwrap();
        let (_, h_noisy) = train(&data, &plan, &noisy).unwrap();
        assert_ne!(h_clean.records, h_noisy.records);
    }

    #[test]
    fn evaluate_epoch_means_losses_and_breaks_ties_to_zero() {
        let plan = CircuitPlan::build(8, 1).unwrap();
        let data = toy_split(8, 6, 2, 8);
        let params = ModelParams::init(8, 1, &mut stream(4, &[tag::INIT]));
        let (loss, acc) = evaluate_epoch(&data.train, &params, &plan).unwrap();
        let mut manual_loss = 0.0;
        let mut manual_hits = 0;
        for s in &data.train {
            let out = forward(&s.features, &params, &plan, None).unwrap();
            manual_loss += cross_entropy(&out.probs, s.label as usize);
            if u8::from(out.probs[1] > out.probs[0]) == s.label {
                manual_hits += 1;
            }
        }
        assert_eq!(loss, manual_loss / 6.0);
        assert_eq!(acc, manual_hits as f64 / 6.0);

        // zero parameters give exact 1/2 probabilities on every sample, so
        // every prediction is class 0
        let zeros = ModelParams::zeros(8, 1);
        let (loss0, acc0) = evaluate_epoch(&data.train, &zeros, &plan).unwrap();
        assert_eq!(loss0, std::f64::consts::LN_2);
        let frac0 = data.train.iter().filter(|s| s.label == 0).count() as f64 / 6.0;
        assert_eq!(acc0, frac0);
    }

    #[test]
    fn history_csv_layout() {
        let history = TrainHistory {
            records: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                train_acc: 0.75,
                val_loss: 0.625,
                val_acc: 0.5,
                lr: 0.003,
            }],
            best_epoch: 1,
            stop_epoch: 1,
        };
        let csv = history.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "epoch,train_loss,train_acc,val_loss,val_acc,lr");
        assert_eq!(lines.next().unwrap(), "1,0.5,0.75,0.625,0.5,0.003");
        assert!(lines.next().is_none());
    }

    #[test]
    fn train_rejects_bad_inputs() {
        let plan = CircuitPlan::build(8, 1).unwrap();
        let good = toy_split(8, 4, 2, 1);

        let empty = SplitSamples {
            train: vec![],
            val: good.val.clone(),
        };
        assert!(train(&empty, &plan, &TrainConfig::defaults(0)).is_err());

        let mut bad_lr = TrainConfig::defaults(0);
        bad_lr.lr_min = bad_lr.lr_init * 2.0;
        assert!(bad_lr.validate().is_err());

        let mut bad_factor = TrainConfig::defaults(0);
        bad_factor.lr_factor = 1.0;
        assert!(bad_factor.validate().is_err());

        let mut bad_batch = TrainConfig::defaults(0);
        bad_batch.batch_size = 0;
        assert!(bad_batch.validate().is_err());

        let mut bad_epochs = TrainConfig::defaults(0);
        bad_epochs.epochs = 0;
        assert!(bad_epochs.validate().is_err());

        assert!(GradMethod::parse("newton").is_err());
        assert_eq!(GradMethod::parse("adjoint").unwrap(), GradMethod::Adjoint);
        assert_eq!(GradMethod::ParameterShift.as_str(), "parameter-shift");
    }
}
