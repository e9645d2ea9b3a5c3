//! Symbolic circuit plans: encoding layer, ring-topology convolution,
//! folding pooling, and execution against the state-vector backend.
//!
//! A plan is built once per (d, levels) and holds gates with symbolic
//! parameter bindings; `execute` resolves bindings against concrete features
//! and parameters, optionally perturbing every rotation angle with Gaussian
//! noise.

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::noise::AngleNoise;
use crate::preprocess::FeatureVector;
use crate::statevec::StateVector;

/// Where a rotation gate gets its angle from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binding {
    /// x[i]: the raw feature.
    Feature(usize),
    /// w[i]·x[i]: feature scaled by the learnable Ry weight.
    FeatureTimesW(usize),
    /// v[i]·x[i]: feature scaled by the learnable Rz weight.
    FeatureTimesV(usize),
    /// theta[level][j], j in 0..6, shared by every conv block at a level.
    ConvTheta { level: usize, index: usize },
    /// phi[level][j], j in 0..3, shared by every pool block at a level.
    PoolPhi { level: usize, index: usize },
}

impl Binding {
    fn describe(&self) -> String {
        match self {
            Binding::Feature(i) => format!("x[{i}]"),
            Binding::FeatureTimesW(i) => format!("w[{i}]*x[{i}]"),
            Binding::FeatureTimesV(i) => format!("v[{i}]*x[{i}]"),
            Binding::ConvTheta { level, index } => format!("theta[{level}][{index}]"),
            Binding::PoolPhi { level, index } => format!("phi[{level}][{index}]"),
        }
    }
}

/// One gate of a plan. Rotations carry a binding; CNOT carries none.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Ry { qubit: usize, binding: Binding },
    Rz { qubit: usize, binding: Binding },
    Cnot { control: usize, target: usize },
}

impl Gate {
    fn describe(&self) -> String {
        match self {
            Gate::Ry { qubit, binding } => format!("ry q{qubit} {}", binding.describe()),
            Gate::Rz { qubit, binding } => format!("rz q{qubit} {}", binding.describe()),
            Gate::Cnot { control, target } => format!("cnot q{control} q{target}"),
        }
    }
}

/// Directed neighbor pairs of one ring convolution layer; the first element
/// of each pair is the CNOT control.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeSets {
    pub even: Vec<(usize, usize)>,
    pub odd: Vec<(usize, usize)>,
}

/// Even pairs (0,1),(2,3),... then odd pairs (1,2),(3,4),... plus the wrap
/// pair (last, first), all over positions in `active`. The undirected union
/// is a single cycle over the active qubits.
pub fn ring_edge_sets(active: &[usize]) -> Result<EdgeSets> {
    let n = active.len();
    if n < 2 {
        return Err(Error::structure(format!(
            "ring layer needs at least 2 active qubits, got {n}"
        )));
    }
    let mut even = Vec::with_capacity(n / 2);
    let mut k = 0;
    while k + 1 <= n - 1 {
        even.push((active[k], active[k + 1]));
        k += 2;
    }
    let mut odd = Vec::with_capacity(n / 2);
    let mut k = 1;
    while k + 1 <= n - 1 {
        odd.push((active[k], active[k + 1]));
        k += 2;
    }
    odd.push((active[n - 1], active[0]));
    Ok(EdgeSets { even, odd })
}

/// Per-qubit encoding: Ry(x_i), Ry(w_i·x_i), Rz(v_i·x_i) for i in 0..d.
pub fn build_encoding_layer(d: usize) -> Vec<Gate> {
    let mut gates = Vec::with_capacity(3 * d);
    for i in 0..d {
        gates.push(Gate::Ry {
            qubit: i,
            binding: Binding::Feature(i),
        });
        gates.push(Gate::Ry {
            qubit: i,
            binding: Binding::FeatureTimesW(i),
        });
        gates.push(Gate::Rz {
            qubit: i,
            binding: Binding::FeatureTimesV(i),
        });
    }
    gates
}

/// One two-qubit convolution block, 8 gates. The six rotation angles bind to
/// the shared per-level theta vector.
pub fn build_conv_block(q1: usize, q2: usize, level: usize) -> Result<Vec<Gate>> {
    if q1 == q2 {
        return Err(Error::invalid_gate(format!(
            "conv block on a single qubit {q1}"
        )));
    }
    let t = |index| Binding::ConvTheta { level, index };
    Ok(vec![
        Gate::Ry { qubit: q1, binding: t(0) },
        Gate::Rz { qubit: q1, binding: t(1) },
        Gate::Ry { qubit: q2, binding: t(2) },
        Gate::Rz { qubit: q2, binding: t(3) },
        Gate::Cnot { control: q1, target: q2 },
        Gate::Ry { qubit: q2, binding: t(4) },
        Gate::Cnot { control: q1, target: q2 },
        Gate::Rz { qubit: q2, binding: t(5) },
    ])
}

/// Conv blocks over every even edge, then every odd edge (wrap pair last).
pub fn build_ring_conv_layer(active: &[usize], level: usize) -> Result<Vec<Gate>> {
    let edges = ring_edge_sets(active)?;
    let mut gates = Vec::with_capacity(8 * (edges.even.len() + edges.odd.len()));
    for (q1, q2) in edges.even.iter().chain(edges.odd.iter()) {
        gates.extend(build_conv_block(*q1, *q2, level)?);
    }
    Ok(gates)
}

/// Folding pool: the first half of `active` is projected onto the second
/// half; returns the gates and the surviving (target) active list. With an
/// odd count the extra target qubit passes through unpaired.
pub fn build_pool_layer(active: &[usize], level: usize) -> Result<(Vec<Gate>, Vec<usize>)> {
    let n = active.len();
    if n < 2 {
        return Err(Error::structure(format!(
            "pool layer needs at least 2 active qubits, got {n}"
        )));
    }
    let half = n / 2;
    let (source, target) = active.split_at(half);
    let p = |index| Binding::PoolPhi { level, index };
    let mut gates = Vec::with_capacity(4 * half);
    for (&s, &t) in source.iter().zip(target.iter()) {
        gates.push(Gate::Ry { qubit: t, binding: p(0) });
        gates.push(Gate::Rz { qubit: s, binding: p(1) });
        gates.push(Gate::Cnot { control: s, target: t });
        gates.push(Gate::Ry { qubit: t, binding: p(2) });
    }
    Ok((gates, target.to_vec()))
}

/// A fully built circuit: gate order is encoding layer, then per level one
/// conv layer followed by one pool layer.
#[derive(Clone, Debug)]
pub struct CircuitPlan {
    n_qubits: usize,
    levels: usize,
    gates: Vec<Gate>,
    /// Active qubit list entering each level; entry 0 is all qubits, the
    /// last entry is `final_active`.
    actives: Vec<Vec<usize>>,
}

impl CircuitPlan {
    /// Encoding plus `levels` conv/pool rounds on `d` qubits.
    pub fn build(d: usize, levels: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::config(format!("model needs at least 2 qubits, got {d}")));
        }
        let mut gates = build_encoding_layer(d);
        let mut actives = vec![(0..d).collect::<Vec<_>>()];
        for level in 0..levels {
            let active = actives.last().unwrap().clone();
            gates.extend(build_ring_conv_layer(&active, level)?);
            let (pool_gates, next) = build_pool_layer(&active, level)?;
            gates.extend(pool_gates);
            actives.push(next);
        }
        let plan = Self { n_qubits: d, levels, gates, actives };
        if plan.final_active().len() < 4 {
            return Err(Error::config(format!(
                "only {} qubits active after {levels} pool level(s); readout needs 4",
                plan.final_active().len()
            )));
        }
        Ok(plan)
    }

    /// Wrap an explicit gate list on `d` qubits (no pool structure; all
    /// qubits stay active). The level count is inferred from the highest
    /// shared-parameter binding so `check_dims` stays meaningful. Used for
    /// reduced circuits and experiments.
    pub fn from_gates(d: usize, gates: Vec<Gate>) -> Result<Self> {
        if d == 0 {
            return Err(Error::config("circuit needs at least 1 qubit".to_string()));
        }
        let mut levels = 0usize;
        for gate in &gates {
            let ok = match *gate {
                Gate::Ry { qubit, .. } | Gate::Rz { qubit, .. } => qubit < d,
                Gate::Cnot { control, target } => {
                    if control == target {
                        return Err(Error::invalid_gate(format!(
                            "cnot control and target are both qubit {control}"
                        )));
                    }
                    control < d && target < d
                }
            };
            if !ok {
                return Err(Error::index(format!(
                    "gate {} out of range for {d} qubits",
                    gate.describe()
                )));
            }
            if let Gate::Ry { binding, .. } | Gate::Rz { binding, .. } = gate {
                match *binding {
                    Binding::Feature(i)
                    | Binding::FeatureTimesW(i)
                    | Binding::FeatureTimesV(i) => {
                        if i >= d {
                            return Err(Error::index(format!(
                                "feature index {i} out of range for {d} qubits"
                            )));
                        }
                    }
                    Binding::ConvTheta { level, index } => {
                        if index >= 6 {
                            return Err(Error::index(format!("theta index {index} out of range")));
                        }
                        levels = levels.max(level + 1);
                    }
                    Binding::PoolPhi { level, index } => {
                        if index >= 3 {
                            return Err(Error::index(format!("phi index {index} out of range")));
                        }
                        levels = levels.max(level + 1);
                    }
                }
            }
        }
        Ok(Self {
            n_qubits: d,
            levels,
            gates,
            actives: vec![(0..d).collect()],
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn gate_count(&self) -> usize {
        self.gates.len()
    }

    /// Active list entering level `l` (level 0 = all qubits).
    pub fn active_at_level(&self, l: usize) -> Option<&[usize]> {
        self.actives.get(l).map(Vec::as_slice)
    }

    pub fn final_active(&self) -> &[usize] {
        self.actives.last().unwrap()
    }

    /// The four lowest-index surviving qubits, ascending: the readout set.
    pub fn readout_qubits(&self) -> Result<[usize; 4]> {
        let fa = self.final_active();
        if fa.len() < 4 {
            return Err(Error::config(format!(
                "readout needs 4 active qubits, plan has {}",
                fa.len()
            )));
        }
        Ok([fa[0], fa[1], fa[2], fa[3]])
    }

    /// Human-readable listing, one gate per line.
    pub fn listing(&self) -> String {
        let mut out = String::new();
        for gate in &self.gates {
            out.push_str(&gate.describe());
            out.push('\n');
        }
        out
    }

    /// Resolve every binding to a concrete angle. CNOTs resolve to `None`.
    /// With noise present, every rotation angle gets an independent
    /// Gaussian(0, σ) added, in gate order.
    pub(crate) fn resolve_angles(
        &self,
        features: &FeatureVector,
        params: &ModelParams,
        mut noise: Option<&mut AngleNoise>,
    ) -> Result<Vec<Option<f64>>> {
        self.check_dims(features, params)?;
        let x = features.values();
        let mut angles = Vec::with_capacity(self.gates.len());
        for gate in &self.gates {
            let binding = match gate {
                Gate::Ry { binding, .. } | Gate::Rz { binding, .. } => binding,
                Gate::Cnot { .. } => {
                    angles.push(None);
                    continue;
                }
            };
            let base = match *binding {
                Binding::Feature(i) => x[i],
                Binding::FeatureTimesW(i) => params.w[i] * x[i],
                Binding::FeatureTimesV(i) => params.v[i] * x[i],
                Binding::ConvTheta { level, index } => params.conv_theta[level][index],
                Binding::PoolPhi { level, index } => params.pool_phi[level][index],
            };
            let angle = match noise.as_deref_mut() {
                Some(n) => n.perturb(base),
                None => base,
            };
            angles.push(Some(angle));
        }
        Ok(angles)
    }

    pub(crate) fn check_dims(&self, features: &FeatureVector, params: &ModelParams) -> Result<()> {
        if features.len() != self.n_qubits {
            return Err(Error::contract(format!(
                "feature vector has {} entries, plan expects {}",
                features.len(),
                self.n_qubits
            )));
        }
        params.check_dims(self.n_qubits, self.levels)
    }

    /// Apply pre-resolved angles to a fresh |0...0⟩ register.
    pub(crate) fn apply_resolved(&self, angles: &[Option<f64>]) -> Result<StateVector> {
        let mut state = StateVector::zero(self.n_qubits)?;
        for (gate, angle) in self.gates.iter().zip(angles) {
            match (gate, angle) {
                (Gate::Ry { qubit, .. }, Some(a)) => state.apply_ry(*qubit, *a)?,
                (Gate::Rz { qubit, .. }, Some(a)) => state.apply_rz(*qubit, *a)?,
                (Gate::Cnot { control, target }, None) => state.apply_cnot(*control, *target)?,
                _ => {
                    return Err(Error::contract(
                        "resolved angle list does not match gate list".to_string(),
                    ))
                }
            }
        }
        Ok(state)
    }

    /// Run the circuit: bind features and parameters, apply all gates to
    /// |0...0⟩, return the final state.
    pub fn execute(
        &self,
        features: &FeatureVector,
        params: &ModelParams,
        noise: Option<&mut AngleNoise>,
    ) -> Result<StateVector> {
        let angles = self.resolve_angles(features, params, noise)?;
        self.apply_resolved(&angles)
    }
}
