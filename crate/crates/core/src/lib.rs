//! Quantum-kernel support vector regression for disability inception rates.
//!
//! Covariates `(gender, age)` are embedded into two-qubit states by a small
//! parametrized circuit; the kernel is the squared overlap of two embedded
//! states, computed exactly on a state-vector simulator or estimated from
//! simulated measurement shots. A weighted ε-SVR fitted on logit inception
//! rates then gives probabilities in (0, 1), evaluated by leave-one-out
//! cross-validation.

#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod digest;
pub mod error;
pub mod eval;
pub mod feature_map;
pub mod inception;
pub mod kernel;
pub mod rng;
pub mod statevector;
pub mod svr;

pub use error::{Error, Result};
pub use eval::{loocv, loocv_with_kernel, weighted_r2, LoocvResult, R2Status};
pub use feature_map::{embedding_circuit, kernel_circuit, Covariate};
pub use inception::{
    inverse_logit, logit_target, sample_weights, synth_dataset, to_covariate, CohortRecord,
    Dataset, Gender, Scenario, Surface,
};
pub use kernel::{
    classical_kernel, exact_quantum_kernel, kernel_matrix, kernel_vector, psd_diagnostics,
    sampled_quantum_kernel, KernelMatrix, KernelMethod, KernelSpec, PsdDiagnostics,
};
pub use statevector::{Circuit, Gate, GateKind, StateVector};
pub use svr::{kkt_check, solve_dual, DualSolution, KktReport, SvrConfig, SvrModel};
