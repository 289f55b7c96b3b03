//! Dense state-vector simulator for small parametrized circuits.
//!
//! Gate set is RY, RZ and controlled-RZ with half-angle conventions:
//!
//! ```text
//! RY(θ) = [[cos θ/2, -sin θ/2], [sin θ/2, cos θ/2]]
//! RZ(θ) = diag(e^{-iθ/2}, e^{iθ/2})
//! CRZ(θ) = |0⟩⟨0| ⊗ I + |1⟩⟨1| ⊗ RZ(θ)   (control ⊗ target)
//! ```
//!
//! Basis states are indexed with qubit 0 as the most significant bit, so for
//! two qubits `|q0 q1⟩` has index `2·q0 + q1`.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Largest register the dense simulator accepts.
pub const MAX_QUBITS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateKind {
    RY,
    RZ,
    CRZ,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub kind: GateKind,
    /// Rotation angle in radians.
    pub angle: f64,
    pub target: usize,
    /// Present exactly when `kind` is `CRZ`.
    pub control: Option<usize>,
}

impl Gate {
    pub fn ry(target: usize, angle: f64) -> Self {
        Gate {
            kind: GateKind::RY,
            angle,
            target,
            control: None,
        }
    }

    pub fn rz(target: usize, angle: f64) -> Self {
        Gate {
            kind: GateKind::RZ,
            angle,
            target,
            control: None,
        }
    }

    pub fn crz(control: usize, target: usize, angle: f64) -> Self {
        Gate {
            kind: GateKind::CRZ,
            angle,
            target,
            control: Some(control),
        }
    }

    /// Inverse of a rotation gate: same gate, negated angle.
    pub fn inverse(&self) -> Self {
        Gate {
            angle: -self.angle,
            ..*self
        }
    }

    pub fn validate(&self, num_qubits: usize) -> Result<()> {
        if self.target >= num_qubits {
            return Err(Error::invalid(format!(
                "gate target {} out of range for {num_qubits} qubit(s)",
                self.target
            )));
        }
        match (self.kind, self.control) {
            (GateKind::CRZ, Some(c)) => {
                if c >= num_qubits {
                    return Err(Error::invalid(format!(
                        "gate control {c} out of range for {num_qubits} qubit(s)"
                    )));
                }
                if c == self.target {
                    return Err(Error::invalid("control and target must differ"));
                }
            }
            (GateKind::CRZ, None) => {
                return Err(Error::invalid("CRZ gate requires a control qubit"))
            }
            (_, Some(_)) => {
                return Err(Error::invalid(format!(
                    "{:?} gate takes no control qubit",
                    self.kind
                )))
            }
            (_, None) => {}
        }
        if !self.angle.is_finite() {
            return Err(Error::invalid("gate angle must be finite"));
        }
        Ok(())
    }
}

/// Ordered gate list over a fixed register.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    num_qubits: usize,
    gates: Vec<Gate>,
}

impl Circuit {
    pub fn new(num_qubits: usize) -> Result<Self> {
        check_qubits(num_qubits)?;
        Ok(Circuit {
            num_qubits,
            gates: Vec::new(),
        })
    }

    pub fn from_gates(num_qubits: usize, gates: Vec<Gate>) -> Result<Self> {
        let mut c = Circuit::new(num_qubits)?;
        for g in gates {
            c.push(g)?;
        }
        Ok(c)
    }

    pub fn push(&mut self, gate: Gate) -> Result<()> {
        gate.validate(self.num_qubits)?;
        self.gates.push(gate);
        Ok(())
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    /// U†: gates reversed, each angle negated.
    pub fn adjoint(&self) -> Circuit {
        Circuit {
            num_qubits: self.num_qubits,
            gates: self.gates.iter().rev().map(Gate::inverse).collect(),
        }
    }

    /// `self` followed by `other`.
    pub fn then(&self, other: &Circuit) -> Result<Circuit> {
        if self.num_qubits != other.num_qubits {
            return Err(Error::invalid(format!(
                "cannot concatenate circuits on {} and {} qubits",
                self.num_qubits, other.num_qubits
            )));
        }
        let mut gates = self.gates.clone();
        gates.extend_from_slice(&other.gates);
        Ok(Circuit {
            num_qubits: self.num_qubits,
            gates,
        })
    }
}

fn check_qubits(num_qubits: usize) -> Result<()> {
    if num_qubits == 0 {
        return Err(Error::invalid("num_qubits must be at least 1"));
    }
    if num_qubits > MAX_QUBITS {
        return Err(Error::invalid(format!(
            "num_qubits {num_qubits} exceeds the dense simulator limit {MAX_QUBITS}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    num_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// |0…0⟩.
    pub fn ground_state(num_qubits: usize) -> Result<Self> {
        check_qubits(num_qubits)?;
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << num_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Ok(StateVector {
            num_qubits,
            amplitudes,
        })
    }

    /// Builds a state from raw amplitudes. The length must be a power of two;
    /// the caller is responsible for normalization.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::invalid(format!(
                "amplitude count {len} is not a power of two >= 2"
            )));
        }
        let num_qubits = len.trailing_zeros() as usize;
        check_qubits(num_qubits)?;
        Ok(StateVector {
            num_qubits,
            amplitudes,
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Bit mask of `qubit` in a basis index (qubit 0 is the MSB).
    fn mask(&self, qubit: usize) -> usize {
        1 << (self.num_qubits - 1 - qubit)
    }

    pub fn apply_gate(&self, gate: &Gate) -> Result<StateVector> {
        let mut out = self.clone();
        out.apply_gate_in_place(gate)?;
        Ok(out)
    }

    pub fn apply_circuit(&self, circuit: &Circuit) -> Result<StateVector> {
        if circuit.num_qubits() != self.num_qubits {
            return Err(Error::invalid(format!(
                "circuit acts on {} qubit(s) but state has {}",
                circuit.num_qubits(),
                self.num_qubits
            )));
        }
        let mut out = self.clone();
        for g in circuit.gates() {
            out.apply_gate_in_place(g)?;
        }
        Ok(out)
    }

    fn apply_gate_in_place(&mut self, gate: &Gate) -> Result<()> {
        gate.validate(self.num_qubits)?;
        let half = 0.5 * gate.angle;
        let t = self.mask(gate.target);
        match gate.kind {
            GateKind::RY => {
                let (s, c) = half.sin_cos();
                for i in 0..self.amplitudes.len() {
                    if i & t == 0 {
                        let a0 = self.amplitudes[i];
                        let a1 = self.amplitudes[i | t];
                        self.amplitudes[i] = a0 * c - a1 * s;
                        self.amplitudes[i | t] = a0 * s + a1 * c;
                    }
                }
            }
            GateKind::RZ | GateKind::CRZ => {
                let ctrl = gate.control.map(|q| self.mask(q)).unwrap_or(0);
                let phase0 = Complex64::from_polar(1.0, -half);
                let phase1 = Complex64::from_polar(1.0, half);
                for (i, amp) in self.amplitudes.iter_mut().enumerate() {
                    if i & ctrl != ctrl {
                        continue;
                    }
                    *amp *= if i & t == 0 { phase0 } else { phase1 };
                }
            }
        }
        Ok(())
    }

    /// |amplitude[basis_index]|², clamped to [0, 1].
    pub fn outcome_probability(&self, basis_index: usize) -> Result<f64> {
        self.amplitudes
            .get(basis_index)
            .map(|a| a.norm_sqr().min(1.0))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "basis index {basis_index} out of range for {} amplitudes",
                    self.amplitudes.len()
                ))
            })
    }

    /// Simulates `shots` computational-basis measurements and returns the
    /// count observed for each basis index. Deterministic in `seed`.
    pub fn sample_outcomes(&self, shots: u64, seed: u64) -> Result<Vec<u64>> {
        if shots == 0 {
            return Err(Error::invalid("shots must be at least 1"));
        }
        let mut cumulative = Vec::with_capacity(self.amplitudes.len());
        let mut acc = 0.0;
        for a in &self.amplitudes {
            acc += a.norm_sqr();
            cumulative.push(acc);
        }
        let total = acc;
        // Rounding can leave the top of the cumulative table short of `total`;
        // draws landing there go to the last outcome with non-zero mass.
        let last_nonzero = self
            .amplitudes
            .iter()
            .rposition(|a| a.norm_sqr() > 0.0)
            .unwrap_or(0);

        let mut rng = rng_from_seed(seed);
        let mut counts = vec![0u64; self.amplitudes.len()];
        for _ in 0..shots {
            let u: f64 = rng.random::<f64>() * total;
            let k = cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(last_nonzero);
            counts[k] += 1;
        }
        Ok(counts)
    }
}
