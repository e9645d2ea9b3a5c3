//! Dense state-vector simulation of an n-qubit register.
//!
//! Amplitudes are stored as all 2^n complex doubles, indexed so that qubit
//! `q` is bit `q` of the basis index (qubit 0 = least significant bit).
//! Gates are applied in place over strided amplitude pairs; nothing of size
//! 4^n is ever materialized, so one gate costs O(2^n).

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Default cap on register width (2^24 amplitudes ≈ 256 MiB).
pub const MAX_QUBITS: usize = 24;

/// An n-qubit pure state.
#[derive(Clone, Debug)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// |0...0⟩ on `n_qubits` qubits.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        Self::zero_capped(n_qubits, MAX_QUBITS)
    }

    /// |0...0⟩ with an explicit width cap.
    pub fn zero_capped(n_qubits: usize, cap: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > cap {
            return Err(Error::config(format!(
                "qubit count {n_qubits} outside 1..={cap}"
            )));
        }
        let mut amps = vec![Complex64::ZERO; 1 << n_qubits];
        amps[0] = Complex64::ONE;
        Ok(Self { n_qubits, amps })
    }

    /// Wrap an explicit amplitude vector. Length must be a power of two
    /// (≥ 2) and the squared norm must be 1 within 1e-6.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let len = amps.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::contract(format!(
                "amplitude vector length {len} is not a power of two ≥ 2"
            )));
        }
        let n_qubits = len.trailing_zeros() as usize;
        if n_qubits > MAX_QUBITS {
            return Err(Error::config(format!(
                "qubit count {n_qubits} outside 1..={MAX_QUBITS}"
            )));
        }
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::contract(format!(
                "amplitude vector is not normalized (norm² = {norm})"
            )));
        }
        Ok(Self { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    /// Mutable amplitude access for in-crate algorithms that build
    /// unnormalized adjoint vectors. Callers may break the norm invariant.
    pub(crate) fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    /// Σ|a_k|². Stays within 1e-10 of 1 under any gate sequence.
    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    fn check_qubit(&self, q: usize) -> Result<()> {
        if q >= self.n_qubits {
            return Err(Error::index(format!(
                "qubit {q} out of range for {}-qubit state",
                self.n_qubits
            )));
        }
        Ok(())
    }

    /// Y-rotation: [[cos(θ/2), −sin(θ/2)], [sin(θ/2), cos(θ/2)]].
    pub fn apply_ry(&mut self, q: usize, angle: f64) -> Result<()> {
        self.check_qubit(q)?;
        let (s, c) = (0.5 * angle).sin_cos();
        let step = 1usize << q;
        for block in self.amps.chunks_exact_mut(2 * step) {
            let (lo, hi) = block.split_at_mut(step);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let a0 = *a;
                let b0 = *b;
                *a = c * a0 - s * b0;
                *b = s * a0 + c * b0;
            }
        }
        Ok(())
    }

    /// Z-rotation: diag(e^{−iθ/2}, e^{+iθ/2}).
    pub fn apply_rz(&mut self, q: usize, angle: f64) -> Result<()> {
        self.check_qubit(q)?;
        let p0 = Complex64::from_polar(1.0, -0.5 * angle);
        let p1 = Complex64::from_polar(1.0, 0.5 * angle);
        let step = 1usize << q;
        for block in self.amps.chunks_exact_mut(2 * step) {
            let (lo, hi) = block.split_at_mut(step);
            for a in lo.iter_mut() {
                *a *= p0;
            }
            for b in hi.iter_mut() {
                *b *= p1;
            }
        }
        Ok(())
    }

    /// Flip `target` wherever `control` is set.
    pub fn apply_cnot(&mut self, control: usize, target: usize) -> Result<()> {
        self.check_qubit(control)?;
        self.check_qubit(target)?;
        if control == target {
            return Err(Error::invalid_gate(format!(
                "cnot control and target are both qubit {control}"
            )));
        }
        let cm = 1usize << control;
        let tm = 1usize << target;
        for i in 0..self.amps.len() {
            if i & cm != 0 && i & tm == 0 {
                self.amps.swap(i, i | tm);
            }
        }
        Ok(())
    }

    /// ⟨Z_q⟩ = Σ_k ±|a_k|², + where bit q of k is 0.
    pub fn expectation_z(&self, q: usize) -> Result<f64> {
        self.check_qubit(q)?;
        let mask = 1usize << q;
        let mut acc = 0.0;
        for (i, a) in self.amps.iter().enumerate() {
            let p = a.norm_sqr();
            acc += if i & mask == 0 { p } else { -p };
        }
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn assert_amps(state: &StateVector, expected: &[Complex64], tol: f64) {
        assert_eq!(state.amplitudes().len(), expected.len());
        for (k, (got, want)) in state.amplitudes().iter().zip(expected).enumerate() {
            assert!(
                (got - want).norm() <= tol,
                "amplitude {k}: got {got}, want {want}"
            );
        }
    }

    #[test]
    fn zero_state_single_qubit() {
        let s = StateVector::zero(1).unwrap();
        assert_amps(&s, &[Complex64::ONE, Complex64::ZERO], 0.0);
    }

    #[test]
    fn zero_state_two_qubits() {
        let s = StateVector::zero(2).unwrap();
        assert_eq!(s.amplitudes()[0], Complex64::ONE);
        assert!(s.amplitudes()[1..].iter().all(|a| *a == Complex64::ZERO));
    }

    #[test]
    fn zero_state_norm_is_one() {
        assert_abs_diff_eq!(StateVector::zero(3).unwrap().norm_sqr(), 1.0);
    }

    #[test]
    fn zero_state_cap_enforced() {
        assert!(matches!(StateVector::zero(0), Err(Error::Config(_))));
        assert!(matches!(StateVector::zero(25), Err(Error::Config(_))));
        assert!(StateVector::zero_capped(5, 4).is_err());
        assert!(StateVector::zero_capped(4, 4).is_ok());
    }

    #[test]
    fn ry_pi_flips_zero_to_one() {
        let mut s = StateVector::zero(1).unwrap();
        s.apply_ry(0, PI).unwrap();
        assert_amps(&s, &[Complex64::ZERO, Complex64::ONE], 1e-12);
    }

    #[test]
    fn ry_zero_is_identity() {
        let mut s = StateVector::zero(2).unwrap();
        s.apply_ry(0, 1.234).unwrap();
        s.apply_ry(1, -0.77).unwrap();
        let before = s.clone();
        s.apply_ry(0, 0.0).unwrap();
        s.apply_ry(1, 0.0).unwrap();
        assert_amps(&s, before.amplitudes(), 0.0);
    }

    #[test]
    fn ry_half_pi_equal_superposition() {
        let mut s = StateVector::zero(1).unwrap();
        s.apply_ry(0, FRAC_PI_2).unwrap();
        let h = Complex64::new(SQRT_HALF, 0.0);
        assert_amps(&s, &[h, h], 1e-15);
    }

    #[test]
    fn rz_on_zero_is_phase_only() {
        let mut s = StateVector::zero(1).unwrap();
        s.apply_rz(0, 0.9).unwrap();
        let want = Complex64::from_polar(1.0, -0.45);
        assert_amps(&s, &[want, Complex64::ZERO], 1e-15);
        assert_abs_diff_eq!(s.amplitudes()[0].norm_sqr(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rz_zero_is_identity() {
        let mut s = StateVector::zero(1).unwrap();
        s.apply_ry(0, 0.6).unwrap();
        let before = s.clone();
        s.apply_rz(0, 0.0).unwrap();
        assert_amps(&s, before.amplitudes(), 0.0);
    }

    #[test]
    fn rz_pi_on_plus_state() {
        let mut s = StateVector::zero(1).unwrap();
        s.apply_ry(0, FRAC_PI_2).unwrap();
        s.apply_rz(0, PI).unwrap();
        let want = [
            Complex64::new(0.0, -SQRT_HALF),
            Complex64::new(0.0, SQRT_HALF),
        ];
        assert_amps(&s, &want, 1e-15);
    }

    #[test]
    fn cnot_control_set_flips_target() {
        // Qubit 0 set, qubit 1 clear: index 1 → index 3.
        let mut s = StateVector::zero(2).unwrap();
        s.apply_ry(0, PI).unwrap();
        s.apply_cnot(0, 1).unwrap();
        assert!((s.amplitudes()[3].norm() - 1.0).abs() < 1e-12);
        assert!(s.amplitudes()[1].norm() < 1e-12);
    }

    #[test]
    fn cnot_control_clear_is_noop() {
        // Qubit 1 set, qubit 0 (control) clear: state unchanged.
        let mut s = StateVector::zero(2).unwrap();
        s.apply_ry(1, PI).unwrap();
        let before = s.clone();
        s.apply_cnot(0, 1).unwrap();
        assert_amps(&s, before.amplitudes(), 0.0);
    }

    #[test]
    fn cnot_builds_bell_state() {
        let mut s = StateVector::zero(2).unwrap();
        s.apply_ry(0, FRAC_PI_2).unwrap();
        s.apply_cnot(0, 1).unwrap();
        let h = Complex64::new(SQRT_HALF, 0.0);
        assert_amps(&s, &[h, Complex64::ZERO, Complex64::ZERO, h], 1e-15);
        assert_abs_diff_eq!(s.expectation_z(0).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.expectation_z(1).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn expectation_z_of_zero_state() {
        let s = StateVector::zero(1).unwrap();
        assert_abs_diff_eq!(s.expectation_z(0).unwrap(), 1.0);
    }

    #[test]
    fn expectation_z_of_ry_is_cos_theta() {
        for &theta in &[0.0, 0.3, FRAC_PI_2, 2.2, PI, -1.1] {
            let mut s = StateVector::zero(1).unwrap();
            s.apply_ry(0, theta).unwrap();
            assert_abs_diff_eq!(s.expectation_z(0).unwrap(), theta.cos(), epsilon = 1e-12);
        }
    }

    #[test]
    fn expectation_z_independent_of_register_layout() {
        // cos θ regardless of which qubit in how wide a register.
        let theta = 0.83;
        for n in 1..=5 {
            for q in 0..n {
                let mut s = StateVector::zero(n).unwrap();
                s.apply_ry(q, theta).unwrap();
                assert_abs_diff_eq!(s.expectation_z(q).unwrap(), theta.cos(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn qubit_bounds_checked() {
        let mut s = StateVector::zero(2).unwrap();
        assert!(matches!(s.apply_ry(2, 0.1), Err(Error::Index(_))));
        assert!(matches!(s.apply_rz(9, 0.1), Err(Error::Index(_))));
        assert!(matches!(s.apply_cnot(0, 2), Err(Error::Index(_))));
        assert!(matches!(s.expectation_z(2), Err(Error::Index(_))));
    }

    #[test]
    fn cnot_rejects_equal_qubits() {
        let mut s = StateVector::zero(2).unwrap();
        assert!(matches!(s.apply_cnot(1, 1), Err(Error::InvalidGate(_))));
    }

    #[test]
    fn from_amplitudes_validates() {
        let h = Complex64::new(SQRT_HALF, 0.0);
        assert!(StateVector::from_amplitudes(vec![h, h]).is_ok());
        assert!(StateVector::from_amplitudes(vec![h; 3]).is_err());
        assert!(StateVector::from_amplitudes(vec![h, h, h, h]).is_err());
        assert!(StateVector::from_amplitudes(vec![Complex64::ONE]).is_err());
    }

    #[test]
    fn gates_act_on_correct_strides_in_wider_register() {
        // Ry on qubit 2 of 3 must pair indices (k, k+4).
        let mut s = StateVector::zero(3).unwrap();
        s.apply_ry(2, PI).unwrap();
        assert!((s.amplitudes()[4].norm() - 1.0).abs() < 1e-12);
        assert!(s.amplitudes()[0].norm() < 1e-12);
    }
}
