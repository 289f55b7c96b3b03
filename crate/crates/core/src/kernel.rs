//! Kernel functions and kernel matrices.
//!
//! Two quantum kernels are provided: the exact state-vector value
//! `K(x, z) = |⟨Φ(z)|Φ(x)⟩|²` and its shot-sampled estimate (frequency of the
//! `|00⟩` outcome). Four classical kernels serve as baselines.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::digest::{covariate_digest, covariate_fingerprint};
use crate::error::{Error, Result};
use crate::feature_map::{kernel_circuit, Covariate, NUM_QUBITS};
use crate::rng::entry_seed;
use crate::statevector::StateVector;

pub const DEFAULT_SHOTS: u64 = 8192;
pub const DEFAULT_DEGREE: u32 = 3;

/// Salt separating prediction-time sampling seeds from matrix seeds.
const PREDICT_SALT: u64 = 0x5052_4544_4943_5421;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelMethod {
    Statevector,
    Shots,
    Linear,
    Polynomial,
    Rbf,
    Sigmoid,
}

impl KernelMethod {
    pub const ALL: [KernelMethod; 6] = [
        KernelMethod::Statevector,
        KernelMethod::Shots,
        KernelMethod::Linear,
        KernelMethod::Polynomial,
        KernelMethod::Rbf,
        KernelMethod::Sigmoid,
    ];

    pub fn is_quantum(self) -> bool {
        matches!(self, KernelMethod::Statevector | KernelMethod::Shots)
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelMethod::Statevector => "statevector",
            KernelMethod::Shots => "shots",
            KernelMethod::Linear => "linear",
            KernelMethod::Polynomial => "polynomial",
            KernelMethod::Rbf => "rbf",
            KernelMethod::Sigmoid => "sigmoid",
        }
    }

    fn uses_gamma(self) -> bool {
        matches!(
            self,
            KernelMethod::Polynomial | KernelMethod::Rbf | KernelMethod::Sigmoid
        )
    }
}

impl fmt::Display for KernelMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelMethod::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown kernel method '{s}' (expected one of statevector, shots, linear, polynomial, rbf, sigmoid)"
                ))
            })
    }
}

/// Which kernel to evaluate, with its hyperparameters.
///
/// `gamma = None` means "derive from the data": `1 / (d · var)` where `var`
/// is the variance of all covariate values stacked together.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub method: KernelMethod,
    pub shots: u64,
    pub seed: u64,
    pub gamma: Option<f64>,
    pub coef0: f64,
    pub degree: u32,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            method: KernelMethod::Statevector,
            shots: DEFAULT_SHOTS,
            seed: 0,
            gamma: None,
            coef0: 0.0,
            degree: DEFAULT_DEGREE,
        }
    }
}

impl KernelSpec {
    pub fn new(method: KernelMethod) -> Self {
        KernelSpec {
            method,
            ..Default::default()
        }
    }

    pub fn statevector() -> Self {
        Self::new(KernelMethod::Statevector)
    }

    pub fn shots(shots: u64, seed: u64) -> Self {
        KernelSpec {
            method: KernelMethod::Shots,
            shots,
            seed,
            ..Default::default()
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = Some(gamma);
        self
    }

    pub fn with_coef0(mut self, coef0: f64) -> Self {
        self.coef0 = coef0;
        self
    }

    pub fn with_degree(mut self, degree: u32) -> Self {
        self.degree = degree;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.method == KernelMethod::Shots && self.shots == 0 {
            return Err(Error::invalid("shots must be at least 1"));
        }
        if let Some(g) = self.gamma {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::invalid(format!("gamma must be positive, got {g}")));
            }
        }
        if !self.coef0.is_finite() {
            return Err(Error::invalid("coef0 must be finite"));
        }
        if self.degree == 0 {
            return Err(Error::invalid("degree must be at least 1"));
        }
        Ok(())
    }

    /// Fills in a data-derived gamma where one is needed and missing.
    pub fn resolve(&self, data: &[Covariate]) -> KernelSpec {
        let mut out = *self;
        if self.method.uses_gamma() && self.gamma.is_none() {
            out.gamma = Some(default_gamma(data));
        }
        out
    }

    fn gamma_or_default(&self) -> f64 {
        self.gamma.unwrap_or(1.0)
    }
}

/// `1 / (d · var)` over the stacked covariate values; 1 when the variance vanishes.
pub fn default_gamma(data: &[Covariate]) -> f64 {
    let values: Vec<f64> = data.iter().flat_map(|c| c.to_array()).collect();
    if values.is_empty() {
        return 1.0;
    }
    let d = data[0].to_array().len() as f64;
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
    if var > 0.0 && var.is_finite() {
        1.0 / (d * var)
    } else {
        1.0
    }
}

/// `|⟨Φ(z)|Φ(x)⟩|²`, evaluated as the probability of `|00⟩` after `U(z)† U(x)`.
pub fn exact_quantum_kernel(x: &Covariate, z: &Covariate) -> f64 {
    StateVector::ground_state(NUM_QUBITS)
        .and_then(|s| s.apply_circuit(&kernel_circuit(x, z)))
        .and_then(|s| s.outcome_probability(0))
        .expect("two-qubit kernel circuit is always valid")
}

/// Fraction of `shots` measurements of `U(z)† U(x)|00⟩` that return `|00⟩`.
pub fn sampled_quantum_kernel(x: &Covariate, z: &Covariate, shots: u64, seed: u64) -> Result<f64> {
    let state = StateVector::ground_state(NUM_QUBITS)?.apply_circuit(&kernel_circuit(x, z))?;
    let counts = state.sample_outcomes(shots, seed)?;
    Ok(counts[0] as f64 / shots as f64)
}

fn dot(x: &[f64], z: &[f64]) -> f64 {
    x.iter().zip(z).map(|(a, b)| a * b).sum()
}

/// Linear, polynomial, RBF or sigmoid kernel on plain vectors.
pub fn classical_kernel(x: &[f64], z: &[f64], spec: &KernelSpec) -> Result<f64> {
    if x.len() != z.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            z.len()
        )));
    }
    let gamma = spec.gamma_or_default();
    let v = match spec.method {
        KernelMethod::Linear => dot(x, z),
        KernelMethod::Polynomial => (gamma * dot(x, z) + spec.coef0).powi(spec.degree as i32),
        KernelMethod::Rbf => {
            let d2: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            (-gamma * d2).exp()
        }
        KernelMethod::Sigmoid => (gamma * dot(x, z) + spec.coef0).tanh(),
        m => {
            return Err(Error::invalid(format!("{m} is not a classical kernel")));
        }
    };
    Ok(v)
}

/// Kernel entry `(i, j)`; `seed` is the per-entry sampling seed.
fn entry(x: &Covariate, z: &Covariate, spec: &KernelSpec, seed: u64) -> Result<f64> {
    match spec.method {
        KernelMethod::Statevector => Ok(exact_quantum_kernel(x, z)),
        KernelMethod::Shots => sampled_quantum_kernel(x, z, spec.shots, seed),
        _ => classical_kernel(&x.to_array(), &z.to_array(), spec),
    }
}

/// An n×n kernel matrix with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    values: DMatrix<f64>,
    spec: KernelSpec,
    data_hash: String,
    symmetry_defect: f64,
}

/// Contents of the JSON sidecar written next to a kernel CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSidecar {
    pub n: usize,
    pub spec: KernelSpec,
    pub data_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdDiagnostics {
    pub min_eigenvalue: f64,
    pub symmetry_defect: f64,
}

impl KernelMatrix {
    /// Wraps an externally produced matrix. Asymmetric input is replaced by
    /// `(K + Kᵀ)/2`; the original max |K_ij − K_ji| is kept for diagnostics.
    pub fn from_values(values: DMatrix<f64>, spec: KernelSpec, data_hash: String) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::invalid(format!(
                "kernel matrix must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("kernel matrix contains non-finite values"));
        }
        let symmetry_defect = symmetry_defect(&values);
        let values = if symmetry_defect > 0.0 {
            (&values + values.transpose()) * 0.5
        } else {
            values
        };
        Ok(KernelMatrix {
            values,
            spec,
            data_hash,
            symmetry_defect,
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn data_hash(&self) -> &str {
        &self.data_hash
    }

    /// Minimum eigenvalue plus the symmetry defect of the matrix as constructed.
    pub fn diagnostics(&self) -> PsdDiagnostics {
        let mut d = psd_diagnostics(&self.values).expect("kernel matrix is square");
        d.symmetry_defect = self.symmetry_defect;
        d
    }

    /// Returns a copy with negative eigenvalues clipped to zero.
    pub fn clip_negative_eigenvalues(&self) -> KernelMatrix {
        let eig = SymmetricEigen::new(self.values.clone());
        let clipped = eig.eigenvalues.map(|l| l.max(0.0));
        let q = &eig.eigenvectors;
        let rebuilt = q * DMatrix::from_diagonal(&clipped) * q.transpose();
        let values = (&rebuilt + rebuilt.transpose()) * 0.5;
        KernelMatrix {
            values,
            spec: self.spec,
            data_hash: self.data_hash.clone(),
            symmetry_defect: self.symmetry_defect,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_matrix_csv(&self.values, w)
    }

    pub fn sidecar(&self) -> KernelSidecar {
        KernelSidecar {
            n: self.n(),
            spec: self.spec,
            data_hash: self.data_hash.clone(),
        }
    }

    /// Writes `path` (CSV) and its sidecar (see [`sidecar_path`]).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        fs::write(path, buf)?;
        let json = serde_json::to_string_pretty(&self.sidecar())?;
        fs::write(sidecar_path(path), json + "\n")?;
        Ok(())
    }

    /// Loads a kernel CSV. The sidecar is used when present; otherwise the
    /// provided fallback spec and an empty data hash are recorded.
    pub fn load(path: &Path, fallback: KernelSpec) -> Result<Self> {
        let file = fs::File::open(path)?;
        let values = read_matrix_csv(file).map_err(|e| with_path(e, path))?;
        let side = sidecar_path(path);
        let (spec, hash) = if side.exists() {
            let s: KernelSidecar = serde_json::from_slice(&fs::read(&side)?)?;
            if s.n != values.nrows() {
                return Err(Error::Ingest {
                    path: Some(side),
                    row: None,
                    message: format!(
                        "sidecar says n = {} but CSV has {} rows",
                        s.n,
                        values.nrows()
                    ),
                });
            }
            (s.spec, s.data_hash)
        } else {
            (fallback, String::new())
        };
        KernelMatrix::from_values(values, spec, hash)
    }
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Ingest { row, message, .. } => Error::Ingest {
            path: Some(path.to_path_buf()),
            row,
            message,
        },
        other => other,
    }
}

/// `kernel.csv` → `kernel.meta.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// Formats a value with 17 significant digits.
pub fn fmt_sig17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Header-less CSV, one row per line, 17 significant digits per value.
pub fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, mut w: W) -> Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_sig17(m[(i, j)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads a header-less numeric CSV into a matrix. Rows must have equal length.
pub fn read_matrix_csv<R: Read>(r: R) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row_no = idx + 1;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::ingest(Some(row_no), format!("not a number: '{f}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::ingest(
                    Some(row_no),
                    format!("expected {} values, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::ingest(None, "kernel CSV is empty"));
    }
    let (nr, nc) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_row_iterator(
        nr,
        nc,
        rows.into_iter().flatten(),
    ))
}

fn symmetry_defect(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest eigenvalue of `(K + Kᵀ)/2` and the largest `|K_ij − K_ji|`.
pub fn psd_diagnostics(k: &DMatrix<f64>) -> Result<PsdDiagnostics> {
    if !k.is_square() {
        return Err(Error::invalid(format!(
            "expected a square matrix, got {}x{}",
            k.nrows(),
            k.ncols()
        )));
    }
    if k.nrows() == 0 {
        return Err(Error::invalid("empty matrix"));
    }
    let sym = (k + k.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min_eigenvalue = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok(PsdDiagnostics {
        min_eigenvalue,
        symmetry_defect: symmetry_defect(k),
    })
}

/// Kernel matrix over `data`.
///
/// Only the upper triangle is evaluated and mirrored. Quantum diagonals are
/// set to 1. Shot-sampled entry `(i, j)` uses the seed derived from
/// `(spec.seed, i, j)`, so the result is independent of thread scheduling.
pub fn kernel_matrix(data: &[Covariate], spec: &KernelSpec) -> Result<KernelMatrix> {
    if data.is_empty() {
        return Err(Error::invalid("kernel matrix needs at least one point"));
    }
    spec.validate()?;
    let spec = spec.resolve(data);
    let n = data.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| {
                    if i == j && spec.method.is_quantum() {
                        Ok(1.0)
                    } else {
                        entry(
                            &data[i],
                            &data[j],
                            &spec,
                            entry_seed(spec.seed, i as u64, j as u64),
                        )
                    }
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut values = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + off;
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
    }
    Ok(KernelMatrix {
        values,
        spec,
        data_hash: covariate_digest(data),
        symmetry_defect: 0.0,
    })
}

/// `[K(x_new, data[0]), …, K(x_new, data[n-1])]`.
///
/// `spec` should already be resolved against the training data (as stored
/// in a fitted model); an unresolved gamma is derived from `data`. For
/// quantum kernels an exact match with `data[k]` yields exactly 1. Shot
/// seeds are salted with a fingerprint of `x_new`.
pub fn kernel_vector(x_new: &Covariate, data: &[Covariate], spec: &KernelSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let spec = spec.resolve(data);
    let salt = entry_seed(spec.seed ^ PREDICT_SALT, covariate_fingerprint(x_new), 0);
    data.iter()
        .enumerate()
        .map(|(k, z)| {
            if spec.method.is_quantum() && z == x_new {
                Ok(1.0)
            } else {
                entry(x_new, z, &spec, entry_seed(salt, k as u64, 0))
            }
        })
        .collect()
}
