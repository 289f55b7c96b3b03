//! Reference implementations shared by the integration tests. None of these
//! call into the library's numerical code.
#![allow(dead_code, clippy::needless_range_loop)]

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use qsvr::{CohortRecord, Dataset, Gender};

type M4 = [[Complex64; 4]; 4];

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn zero4() -> M4 {
    [[c(0.0); 4]; 4]
}

fn mul(a: &M4, b: &M4) -> M4 {
    let mut out = zero4();
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn dagger(a: &M4) -> M4 {
    let mut out = zero4();
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = a[j][i].conj();
        }
    }
    out
}

fn kron2(a: [[Complex64; 2]; 2], b: [[Complex64; 2]; 2]) -> M4 {
    let mut out = zero4();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    out[2 * i + k][2 * j + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

fn ry2(theta: f64) -> [[Complex64; 2]; 2] {
    let (s, co) = (theta / 2.0).sin_cos();
    [[c(co), c(-s)], [c(s), c(co)]]
}

fn id2() -> [[Complex64; 2]; 2] {
    [[c(1.0), c(0.0)], [c(0.0), c(1.0)]]
}

/// Basis index = 2·q0 + q1, so q0 is the left Kronecker factor.
fn ry_q0(theta: f64) -> M4 {
    kron2(ry2(theta), id2())
}

fn ry_q1(theta: f64) -> M4 {
    kron2(id2(), ry2(theta))
}

/// Controlled RZ, control q0, target q1.
fn crz(theta: f64) -> M4 {
    let mut m = zero4();
    m[0][0] = c(1.0);
    m[1][1] = c(1.0);
    m[2][2] = Complex64::from_polar(1.0, -theta / 2.0);
    m[3][3] = Complex64::from_polar(1.0, theta / 2.0);
    m
}

/// The four embedding gates in application order.
fn embedding_gates(gender: f64, age: f64) -> [M4; 4] {
    [
        ry_q0(PI * gender),
        ry_q1(PI * age),
        crz(PI * age),
        ry_q0(PI * age),
    ]
}

/// `|⟨00| U(z)† U(x) |00⟩|²` by multiplying the eight 4×4 gate matrices.
pub fn kernel_oracle(x: (f64, f64), z: (f64, f64)) -> f64 {
    let mut u = [[c(0.0); 4]; 4];
    for (i, row) in u.iter_mut().enumerate() {
        row[i] = c(1.0);
    }
    for g in embedding_gates(x.0, x.1) {
        u = mul(&g, &u);
    }
    for g in embedding_gates(z.0, z.1).iter().rev() {
        u = mul(&dagger(g), &u);
    }
    u[0][0].norm_sqr()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| 0.5 * (m[(i, j)] + m[(j, i)])).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = cs * akp - sn * akq;
                    a[k][q] = sn * akp + cs * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = cs * apk - sn * aqk;
                    a[q][k] = sn * apk + cs * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

/// Gaussian elimination with partial pivoting; `None` if singular.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv =
            (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for k in col..n {
                a[r][k] -= f * a[col][k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// `−½ αᵀKα − ε Σ|α| + yᵀα`.
pub fn svr_dual_value(k: &DMatrix<f64>, y: &[f64], alpha: &[f64], eps: f64) -> f64 {
    let n = y.len();
    let mut v = 0.0;
    for i in 0..n {
        v += y[i] * alpha[i] - eps * alpha[i].abs();
        for j in 0..n {
            v -= 0.5 * alpha[i] * alpha[j] * k[(i, j)];
        }
    }
    v
}

/// Exhaustive optimum of the weighted ε-SVR dual for tiny n and a positive
/// definite K. Every sample is assigned one of five faces (lower bound,
/// free negative, zero, free positive, upper bound); on each face the
/// stationarity conditions plus `Σα = 0` form a linear system. The best
/// feasible face solution is the global maximum.
pub fn svr_oracle(k: &DMatrix<f64>, y: &[f64], bounds: &[f64], eps: f64) -> (f64, Vec<f64>) {
    let n = y.len();
    assert!(n <= 7, "oracle is exponential in n");
    let mut best = (f64::NEG_INFINITY, vec![0.0; n]);
    let faces = 5usize.pow(n as u32);
    for code in 0..faces {
        let mut face = vec![0u8; n];
        let mut c = code;
        for f in face.iter_mut() {
            *f = (c % 5) as u8;
            c /= 5;
        }
        let mut alpha = vec![0.0; n];
        let mut free = Vec::new();
        let mut sign = Vec::new();
        for i in 0..n {
            match face[i] {
                0 => alpha[i] = -bounds[i],
                1 => {
                    free.push(i);
                    sign.push(-1.0)
                }
                2 => alpha[i] = 0.0,
                3 => {
                    free.push(i);
                    sign.push(1.0)
                }
                _ => alpha[i] = bounds[i],
            }
        }
        let fixed_sum: f64 = alpha.iter().sum();
        if free.is_empty() {
            if fixed_sum.abs() > 1e-12 {
                continue;
            }
        } else {
            let m = free.len();
            let mut a = vec![vec![0.0; m + 1]; m + 1];
            let mut b = vec![0.0; m + 1];
            for (r, &i) in free.iter().enumerate() {
                for (cc, &j) in free.iter().enumerate() {
                    a[r][cc] = k[(i, j)];
                }
                a[r][m] = 1.0;
                let fixed_k: f64 = (0..n).map(|j| k[(i, j)] * alpha[j]).sum();
                b[r] = y[i] - eps * sign[r] - fixed_k;
            }
            for cc in 0..m {
                a[m][cc] = 1.0;
            }
            b[m] = -fixed_sum;
            let Some(sol) = solve_linear(a, b) else {
                continue;
            };
            let mut ok = true;
            for (r, &i) in free.iter().enumerate() {
                let v = sol[r];
                let tol = 1e-12 * (1.0 + bounds[i]);
                if v * sign[r] < -tol || v.abs() > bounds[i] + tol {
                    ok = false;
                }
                alpha[i] = v.clamp(-bounds[i], bounds[i]);
            }
            if !ok {
                continue;
            }
        }
        let val = svr_dual_value(k, y, &alpha, eps);
        if val > best.0 {
            best = (val, alpha);
        }
    }
    best
}

pub fn rbf_gram(points: &[Vec<f64>], gamma: f64) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |i, j| {
        let d2: f64 = points[i]
            .iter()
            .zip(&points[j])
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        (-gamma * d2).exp()
    })
}

/// `A Aᵀ + ridge·I`.
pub fn ridge_gram(a: &[Vec<f64>], ridge: f64) -> DMatrix<f64> {
    let n = a.len();
    DMatrix::from_fn(n, n, |i, j| {
        let dot: f64 = a[i].iter().zip(&a[j]).map(|(x, y)| x * y).sum();
        dot + if i == j { ridge } else { 0.0 }
    })
}

/// `n` groups with the given rates, exposures and evenly spread ages.
pub fn dataset_from_counts(counts: &[(Gender, f64, u64, u64)]) -> Dataset {
    let records = counts
        .iter()
        .enumerate()
        .map(|(i, &(gender, age, e, d))| CohortRecord {
            group_id: format!("g{i:03}"),
            gender,
            age_years: age,
            exposure: e,
            inceptions: d,
        })
        .collect();
    Dataset::new(records).unwrap()
}
