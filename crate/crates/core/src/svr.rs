//! Weighted ε-support vector regression.
//!
//! The dual is solved over `α_i = λ_i − λ'_i` with per-sample boxes
//! `0 ≤ λ_i, λ'_i ≤ C·w_i`:
//!
//! ```text
//! max  −½ αᵀKα − ε Σ|α_i| + yᵀα    s.t.  Σ α_i = 0,  −C_i ≤ α_i ≤ C_i
//! ```
//!
//! Internally the problem is stacked into 2n variables `(λ, λ')` with labels
//! `(+1…, −1…)` and minimized by SMO using the maximal violating pair.
//! The predictor is `f(x) = Σ α_i K(x, x_i) + β`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::digest::covariate_digest;
use crate::error::{Error, Result};
use crate::feature_map::Covariate;
use crate::kernel::{kernel_matrix, kernel_vector, KernelMatrix, KernelSpec};

/// Curvature floor used when a pair has η ≤ 0 (indefinite kernels).
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrConfig {
    /// Tube half-width, in target units.
    pub epsilon: f64,
    /// Base box bound; sample i gets `c · w_i`.
    pub c: f64,
    /// Stopping threshold on the maximal KKT violation.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SvrConfig {
    fn default() -> Self {
        SvrConfig {
            epsilon: 0.05,
            c: 1.0,
            tolerance: 1e-6,
            max_iterations: 100_000,
        }
    }
}

impl SvrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::invalid(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::invalid(format!("C must be > 0, got {}", self.c)));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::invalid(format!(
                "tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        Ok(())
    }
}

/// Raw output of the dual solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub iterations: usize,
    /// Maximal KKT violation (the gap between the most violating pair).
    pub max_violation: f64,
    /// Dual objective `−½ αᵀKα − ε Σ|α| + yᵀα`.
    pub objective: f64,
}

/// Dual objective of problem D at `alpha`.
pub fn dual_objective(k: &DMatrix<f64>, y: &[f64], alpha: &[f64], epsilon: f64) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += k[(i, j)] * alpha[j];
        }
        quad += alpha[i] * row;
    }
    let l1: f64 = alpha.iter().map(|a| a.abs()).sum();
    let lin: f64 = y.iter().zip(alpha).map(|(y, a)| y * a).sum();
    -0.5 * quad - epsilon * l1 + lin
}

fn check_dims(k: &DMatrix<f64>, y: &[f64], weights: &[f64]) -> Result<()> {
    let n = y.len();
    if !k.is_square() || k.nrows() != n {
        return Err(Error::invalid(format!(
            "kernel is {}x{} but there are {n} targets",
            k.nrows(),
            k.ncols()
        )));
    }
    if weights.len() != n {
        return Err(Error::invalid(format!(
            "{} weights for {n} targets",
            weights.len()
        )));
    }
    if n == 0 {
        return Err(Error::invalid("no training samples"));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::invalid(format!(
            "sample weights must be positive, got {w}"
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("targets must be finite"));
    }
    Ok(())
}

/// Stacked 2n-variable view of the ε-SVR dual.
struct Stacked<'a> {
    k: &'a DMatrix<f64>,
    n: usize,
    upper: Vec<f64>,
}

impl Stacked<'_> {
    #[inline]
    fn sign(&self, t: usize) -> f64 {
        if t < self.n {
            1.0
        } else {
            -1.0
        }
    }

    #[inline]
    fn q(&self, s: usize, t: usize) -> f64 {
        self.sign(s) * self.sign(t) * self.k[(s % self.n, t % self.n)]
    }

    #[inline]
    fn in_up(&self, a: &[f64], t: usize) -> bool {
        if t < self.n {
            a[t] < self.upper[t]
        } else {
            a[t] > 0.0
        }
    }

    #[inline]
    fn in_low(&self, a: &[f64], t: usize) -> bool {
        if t < self.n {
            a[t] > 0.0
        } else {
            a[t] < self.upper[t]
        }
    }

    /// Maximal violating pair `(i, j, gap)`; lowest index wins ties.
    fn select(&self, a: &[f64], g: &[f64]) -> (Option<usize>, Option<usize>, f64) {
        let (mut gmax, mut gmin) = (f64::NEG_INFINITY, f64::INFINITY);
        let (mut i, mut j) = (None, None);
        for t in 0..2 * self.n {
            let v = -self.sign(t) * g[t];
            if self.in_up(a, t) && v > gmax {
                gmax = v;
                i = Some(t);
            }
            if self.in_low(a, t) && v < gmin {
                gmin = v;
                j = Some(t);
            }
        }
        (i, j, gmax - gmin)
    }

    fn gradient(&self, a: &[f64], y: &[f64], epsilon: f64) -> Vec<f64> {
        let l = 2 * self.n;
        (0..l)
            .map(|s| {
                let p = epsilon - self.sign(s) * y[s % self.n];
                p + (0..l)
                    .filter(|&t| a[t] != 0.0)
                    .map(|t| self.q(s, t) * a[t])
                    .sum::<f64>()
            })
            .collect()
    }

    /// One SMO step on the pair (i, j).
    fn step(&self, a: &mut [f64], g: &mut [f64], i: usize, j: usize) {
        let (ci, cj) = (self.upper[i], self.upper[j]);
        let (old_i, old_j) = (a[i], a[j]);
        let (qii, qjj, qij) = (self.q(i, i), self.q(j, j), self.q(i, j));

        if self.sign(i) != self.sign(j) {
            let mut quad = qii + qjj + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-g[i] - g[j]) / quad;
            let diff = a[i] - a[j];
            a[i] += delta;
            a[j] += delta;
            if diff > 0.0 {
                if a[j] < 0.0 {
                    a[j] = 0.0;
                    a[i] = diff;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = -diff;
            }
            if diff > ci - cj {
                if a[i] > ci {
                    a[i] = ci;
                    a[j] = ci - diff;
                }
            } else if a[j] > cj {
                a[j] = cj;
                a[i] = cj + diff;
            }
        } else {
            let mut quad = qii + qjj - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (g[i] - g[j]) / quad;
            let sum = a[i] + a[j];
            a[i] -= delta;
            a[j] += delta;
            if sum > ci {
                if a[i] > ci {
                    a[i] = ci;
                    a[j] = sum - ci;
                }
            } else if a[j] < 0.0 {
                a[j] = 0.0;
                a[i] = sum;
            }
            if sum > cj {
                if a[j] > cj {
                    a[j] = cj;
                    a[i] = sum - cj;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = sum;
            }
        }

        let (di, dj) = (a[i] - old_i, a[j] - old_j);
        for (t, gt) in g.iter_mut().enumerate() {
            *gt += self.q(t, i) * di + self.q(t, j) * dj;
        }
    }
}

/// Solves the weighted ε-SVR dual for a precomputed kernel matrix.
pub fn solve_dual(
    k: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    config: &SvrConfig,
) -> Result<DualSolution> {
    config.validate()?;
    check_dims(k, y, weights)?;
    let n = y.len();
    let upper: Vec<f64> = (0..2 * n).map(|t| config.c * weights[t % n]).collect();
    let prob = Stacked { k, n, upper };

    let mut a = vec![0.0; 2 * n];
    let mut g = prob.gradient(&a, y, config.epsilon);
    let mut iterations = 0;
    let mut gap;
    loop {
        let (i, j, cur_gap) = prob.select(&a, &g);
        gap = cur_gap;
        let (Some(i), Some(j)) = (i, j) else {
            gap = 0.0;
            break;
        };
        if gap <= config.tolerance {
            // confirm against a freshly computed gradient before stopping
            g = prob.gradient(&a, y, config.epsilon);
            let (_, _, fresh) = prob.select(&a, &g);
            gap = fresh;
            if gap <= config.tolerance {
                break;
            }
            continue;
        }
        if iterations >= config.max_iterations {
            let best = finish(k, y, &a, &prob, config, iterations, gap);
            return Err(Error::NotConverged {
                iterations,
                max_violation: gap,
                best: Box::new(best),
            });
        }
        prob.step(&mut a, &mut g, i, j);
        iterations += 1;
    }
    Ok(finish(k, y, &a, &prob, config, iterations, gap.max(0.0)))
}

fn finish(
    k: &DMatrix<f64>,
    y: &[f64],
    a: &[f64],
    prob: &Stacked,
    config: &SvrConfig,
    iterations: usize,
    gap: f64,
) -> DualSolution {
    let n = prob.n;
    let alpha: Vec<f64> = (0..n).map(|i| a[i] - a[i + n]).collect();
    let beta = bias(k, y, &alpha, &prob.upper[..n], config.epsilon);
    DualSolution {
        objective: dual_objective(k, y, &alpha, config.epsilon),
        alpha,
        beta,
        iterations,
        max_violation: gap,
    }
}

fn k_alpha(k: &DMatrix<f64>, alpha: &[f64], i: usize) -> f64 {
    alpha
        .iter()
        .enumerate()
        .filter(|(_, a)| **a != 0.0)
        .map(|(j, a)| k[(i, j)] * a)
        .sum()
}

/// β: mean of `y_i − ε·sign(α_i) − (Kα)_i` over free support vectors, or the
/// midpoint of the feasible interval when every α_i sits at 0 or a bound.
fn bias(k: &DMatrix<f64>, y: &[f64], alpha: &[f64], bounds: &[f64], epsilon: f64) -> f64 {
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    let (mut lb, mut ub) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..alpha.len() {
        let base = y[i] - k_alpha(k, alpha, i);
        let (a, c) = (alpha[i], bounds[i]);
        if a == 0.0 {
            lb = lb.max(base - epsilon);
            ub = ub.min(base + epsilon);
        } else if a >= c {
            ub = ub.min(base - epsilon);
        } else if a <= -c {
            lb = lb.max(base + epsilon);
        } else {
            free_sum += base - epsilon * a.signum();
            free_count += 1;
        }
    }
    if free_count > 0 {
        free_sum / free_count as f64
    } else if lb.is_finite() && ub.is_finite() {
        0.5 * (lb + ub)
    } else if lb.is_finite() {
        lb
    } else if ub.is_finite() {
        ub
    } else {
        0.0
    }
}

/// Optimality summary of a fitted model on its training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub max_violation: f64,
    /// Samples with α_i ≠ 0.
    pub n_support: usize,
    /// Samples with |α_i| at the box bound C_i.
    pub n_bounded: usize,
}

/// Per-sample KKT residuals of `(alpha, beta)` on training data.
pub fn kkt_check(
    k: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    alpha: &[f64],
    beta: f64,
    config: &SvrConfig,
) -> Result<KktReport> {
    check_dims(k, y, weights)?;
    if alpha.len() != y.len() {
        return Err(Error::invalid(format!(
            "{} coefficients for {} targets",
            alpha.len(),
            y.len()
        )));
    }
    let eps = config.epsilon;
    let mut report = KktReport {
        max_violation: 0.0,
        n_support: 0,
        n_bounded: 0,
    };
    for i in 0..y.len() {
        let r = k_alpha(k, alpha, i) + beta - y[i];
        let (a, c) = (alpha[i], config.c * weights[i]);
        let v = if a == 0.0 {
            (r.abs() - eps).max(0.0)
        } else if a >= c {
            (r + eps).max(0.0)
        } else if a <= -c {
            (eps - r).max(0.0)
        } else if a > 0.0 {
            (r + eps).abs()
        } else {
            (r - eps).abs()
        };
        if a != 0.0 {
            report.n_support += 1;
        }
        if a.abs() >= c {
            report.n_bounded += 1;
        }
        report.max_violation = report.max_violation.max(v);
    }
    Ok(report)
}

/// A fitted model: everything needed to predict on new covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub kernel_spec: KernelSpec,
    pub training_inputs: Vec<Covariate>,
    pub sample_weights: Vec<f64>,
    pub config: SvrConfig,
    pub data_hash: String,
}

impl SvrModel {
    /// Fits on `data` with a precomputed kernel matrix for the same data.
    pub fn fit_with_kernel(
        k: &KernelMatrix,
        data: &[Covariate],
        y: &[f64],
        weights: &[f64],
        config: &SvrConfig,
    ) -> Result<SvrModel> {
        if k.n() != data.len() {
            return Err(Error::invalid(format!(
                "kernel is {0}x{0} but there are {1} training inputs",
                k.n(),
                data.len()
            )));
        }
        let sol = solve_dual(k.values(), y, weights, config)?;
        Ok(SvrModel {
            alpha: sol.alpha,
            beta: sol.beta,
            kernel_spec: *k.spec(),
            training_inputs: data.to_vec(),
            sample_weights: weights.to_vec(),
            config: *config,
            data_hash: covariate_digest(data),
        })
    }

    pub fn fit(
        data: &[Covariate],
        y: &[f64],
        weights: &[f64],
        spec: &KernelSpec,
        config: &SvrConfig,
    ) -> Result<SvrModel> {
        let k = kernel_matrix(data, spec)?;
        Self::fit_with_kernel(&k, data, y, weights, config)
    }

    /// `Σ α_i K(x, x_i) + β`.
    pub fn predict(&self, x: &Covariate) -> Result<f64> {
        let kv = kernel_vector(x, &self.training_inputs, &self.kernel_spec)?;
        Ok(kv.iter().zip(&self.alpha).map(|(k, a)| k * a).sum::<f64>() + self.beta)
    }

    pub fn kkt_report(&self, k: &DMatrix<f64>, y: &[f64], config: &SvrConfig) -> Result<KktReport> {
        kkt_check(k, y, &self.sample_weights, &self.alpha, self.beta, config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<SvrModel> {
        let m: SvrModel = serde_json::from_str(s)?;
        let n = m.training_inputs.len();
        if m.alpha.len() != n || m.sample_weights.len() != n {
            return Err(Error::invalid(format!(
                "model has {} coefficients and {} weights for {n} training inputs",
                m.alpha.len(),
                m.sample_weights.len()
            )));
        }
        m.kernel_spec.validate()?;
        m.config.validate()?;
        Ok(m)
    }
}
