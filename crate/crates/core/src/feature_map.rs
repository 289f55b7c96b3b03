//! The two-qubit disability feature map.
//!
//! A covariate `(gender, age)` is embedded as
//!
//! ```text
//! q0: ─RY(π·gender)──●──────────RY(π·age)─
//! q1: ─RY(π·age)─────RZ(π·age)────────────
//! ```
//!
//! and the kernel circuit for a pair `(x, z)` is `U(x)` followed by `U(z)†`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statevector::{Circuit, Gate};

/// Ages above this many centuries are rejected as implausible.
pub const MAX_AGE_CENTURIES: f64 = 1.2;

/// Qubits used by the embedding.
pub const NUM_QUBITS: usize = 2;

/// A 2-d covariate: gender dummy (1 = male) and age in centuries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCovariate")]
pub struct Covariate {
    gender: f64,
    age_centuries: f64,
}

#[derive(Deserialize)]
struct RawCovariate {
    gender: f64,
    age_centuries: f64,
}

impl TryFrom<RawCovariate> for Covariate {
    type Error = Error;

    fn try_from(raw: RawCovariate) -> Result<Self> {
        Covariate::lenient(raw.gender, raw.age_centuries)
    }
}

impl Covariate {
    /// Strict constructor: gender must be exactly 0 or 1.
    pub fn new(gender: f64, age_centuries: f64) -> Result<Self> {
        if gender != 0.0 && gender != 1.0 {
            return Err(Error::invalid(format!(
                "gender must be 0 or 1, got {gender}"
            )));
        }
        Self::lenient(gender, age_centuries)
    }

    /// Accepts any gender value in [0, 1]; for experimentation only.
    pub fn lenient(gender: f64, age_centuries: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gender) {
            return Err(Error::invalid(format!(
                "gender must lie in [0, 1], got {gender}"
            )));
        }
        if !(0.0..=MAX_AGE_CENTURIES).contains(&age_centuries) {
            return Err(Error::invalid(format!(
                "age must lie in [0, {MAX_AGE_CENTURIES}] centuries, got {age_centuries}"
            )));
        }
        Ok(Covariate {
            gender,
            age_centuries,
        })
    }

    pub fn gender(&self) -> f64 {
        self.gender
    }

    pub fn age_centuries(&self) -> f64 {
        self.age_centuries
    }

    pub fn to_array(&self) -> [f64; 2] {
        [self.gender, self.age_centuries]
    }
}

/// U_Φ(x): four gates in diagram order.
pub fn embedding_circuit(x: &Covariate) -> Circuit {
    let g = PI * x.gender;
    let a = PI * x.age_centuries;
    Circuit::from_gates(
        NUM_QUBITS,
        vec![
            Gate::ry(0, g),
            Gate::ry(1, a),
            Gate::crz(0, 1, a),
            Gate::ry(0, a),
        ],
    )
    .expect("embedding gates are valid on two qubits")
}

/// U_Φ(z)† U_Φ(x): the circuit whose |00⟩ probability is K(x, z).
pub fn kernel_circuit(x: &Covariate, z: &Covariate) -> Circuit {
    embedding_circuit(x)
        .then(&embedding_circuit(z).adjoint())
        .expect("both halves act on two qubits")
}
