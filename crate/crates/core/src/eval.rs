//! Leave-one-out cross-validation and weighted R² on the rate scale.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inception::{inverse_logit, sample_weights, Dataset};
use crate::kernel::{fmt_sig17, kernel_matrix, KernelMatrix, KernelSpec};
use crate::svr::{solve_dual, SvrConfig};

pub const RESULTS_CSV_HEADER: [&str; 6] = [
    "group_id",
    "gender",
    "age_years",
    "weight",
    "observed_rate",
    "predicted_rate",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPrediction {
    pub group_id: String,
    pub gender: String,
    pub age_years: f64,
    /// Exposure E_i.
    pub weight: f64,
    /// Continuity-corrected observed rate.
    pub observed_rate: f64,
    /// Out-of-sample predicted rate.
    pub predicted_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoocvResult {
    pub per_group: Vec<GroupPrediction>,
    /// `None` when the observed rates have zero weighted variance.
    pub weighted_r2: Option<f64>,
    pub r2_status: R2Status,
    pub kernel_spec: KernelSpec,
    pub svr_config: SvrConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum R2Status {
    Defined,
    UndefinedZeroVariance,
}

impl LoocvResult {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(RESULTS_CSV_HEADER)?;
        for g in &self.per_group {
            wtr.write_record([
                g.group_id.clone(),
                g.gender.clone(),
                g.age_years.to_string(),
                g.weight.to_string(),
                fmt_sig17(g.observed_rate),
                fmt_sig17(g.predicted_rate),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// `1 − Σ w(o − p)² / Σ w(o − ō_w)²`.
pub fn weighted_r2(observed: &[f64], predicted: &[f64], weights: &[f64]) -> Result<f64> {
    let n = observed.len();
    if predicted.len() != n || weights.len() != n {
        return Err(Error::invalid(format!(
            "length mismatch: {n} observed, {} predicted, {} weights",
            predicted.len(),
            weights.len()
        )));
    }
    if n < 2 {
        return Err(Error::invalid("weighted R² needs at least 2 points"));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::invalid("weights must be positive"));
    }
    let sw: f64 = weights.iter().sum();
    let mean = observed
        .iter()
        .zip(weights)
        .map(|(o, w)| o * w)
        .sum::<f64>()
        / sw;
    let ss_tot: f64 = observed
        .iter()
        .zip(weights)
        .map(|(o, w)| w * (o - mean).powi(2))
        .sum();
    // relative floor: rounding in the weighted mean alone produces ~1e-32·mean²
    if ss_tot <= sw * (mean * mean * 1e-24 + f64::MIN_POSITIVE) {
        return Err(Error::UndefinedStatistic(
            "observed rates have zero weighted variance".into(),
        ));
    }
    let ss_res: f64 = observed
        .iter()
        .zip(predicted)
        .zip(weights)
        .map(|((o, p), w)| w * (o - p).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// LOOCV with a kernel matrix computed once over the full dataset.
pub fn loocv(data: &Dataset, spec: &KernelSpec, config: &SvrConfig) -> Result<LoocvResult> {
    let x = data.covariates()?;
    let k = kernel_matrix(&x, spec)?;
    loocv_with_kernel(data, &k, config)
}

/// LOOCV on a precomputed kernel: fold i trains on the sub-matrix without
/// row/column i and predicts from row i.
pub fn loocv_with_kernel(
    data: &Dataset,
    k: &KernelMatrix,
    config: &SvrConfig,
) -> Result<LoocvResult> {
    let n = data.len();
    if n < 3 {
        return Err(Error::invalid(format!(
            "LOOCV needs at least 3 groups, got {n}"
        )));
    }
    if k.n() != n {
        return Err(Error::invalid(format!(
            "kernel matrix is {0}x{0} but the dataset has {n} groups",
            k.n()
        )));
    }
    config.validate()?;
    let y = data.logit_targets()?;
    let exposures = data.exposures();
    let kv = k.values();

    let predicted: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|held| {
            let train: Vec<usize> = (0..n).filter(|&i| i != held).collect();
            let sub = kv.select_rows(&train).select_columns(&train);
            let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let e_train: Vec<f64> = train.iter().map(|&i| exposures[i]).collect();
            let fold = |e: Error| Error::Fold {
                fold: held,
                group_id: data.records()[held].group_id.clone(),
                source: Box::new(e),
            };
            let w = sample_weights(&e_train).map_err(fold)?;
            let sol = solve_dual(&sub, &y_train, &w, config).map_err(fold)?;
            let f: f64 = train
                .iter()
                .zip(&sol.alpha)
                .map(|(&i, a)| a * kv[(held, i)])
                .sum::<f64>()
                + sol.beta;
            Ok(inverse_logit(f))
        })
        .collect::<Result<_>>()?;

    let per_group: Vec<GroupPrediction> = data
        .records()
        .iter()
        .zip(&predicted)
        .map(|(r, &p)| GroupPrediction {
            group_id: r.group_id.clone(),
            gender: r.gender.code().to_string(),
            age_years: r.age_years,
            weight: r.exposure as f64,
            observed_rate: r.corrected_rate(),
            predicted_rate: p,
        })
        .collect();

    let observed: Vec<f64> = per_group.iter().map(|g| g.observed_rate).collect();
    let (weighted_r2, r2_status) = match weighted_r2(&observed, &predicted, &exposures) {
        Ok(v) => (Some(v), R2Status::Defined),
        Err(Error::UndefinedStatistic(_)) => (None, R2Status::UndefinedZeroVariance),
        Err(e) => return Err(e),
    };
    Ok(LoocvResult {
        per_group,
        weighted_r2,
        r2_status,
        kernel_spec: *k.spec(),
        svr_config: *config,
    })
}
