//! Disability inception data: cohort records, logit targets, exposure
//! weights, CSV ingestion and synthetic cohorts.
//!
//! Each cohort i has `D_i ~ Bin(E_i, p(x_i))` inceptions among `E_i` healthy
//! insured. The regression target is the logit of the continuity-corrected
//! rate `(D + ½) / (E + 1)`, which stays finite at `D = 0` and `D = E`.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_map::Covariate;
use crate::rng::{entry_seed, rng_from_seed};

pub const CSV_HEADER: [&str; 5] = ["group_id", "gender", "age_years", "exposure", "inceptions"];

pub const MAX_AGE_YEARS: f64 = 120.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "F")]
    Female,
    #[serde(rename = "M")]
    Male,
}

impl Gender {
    /// The dummy covariate: 1 for male, 0 for female.
    pub fn dummy(self) -> f64 {
        match self {
            Gender::Female => 0.0,
            Gender::Male => 1.0,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Gender::Female => "F",
            Gender::Male => "M",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "F" => Ok(Gender::Female),
            "M" => Ok(Gender::Male),
            other => Err(Error::invalid(format!(
                "gender must be F or M, got '{other}'"
            ))),
        }
    }
}

/// One population subgroup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRecord {
    pub group_id: String,
    pub gender: Gender,
    pub age_years: f64,
    /// E_i: healthy insured at risk.
    pub exposure: u64,
    /// D_i: those who fell ill.
    pub inceptions: u64,
}

impl CohortRecord {
    pub fn validate(&self) -> Result<()> {
        if self.group_id.is_empty() {
            return Err(Error::invalid("group_id must not be empty"));
        }
        if !(0.0..=MAX_AGE_YEARS).contains(&self.age_years) {
            return Err(Error::invalid(format!(
                "age_years must lie in [0, {MAX_AGE_YEARS}], got {}",
                self.age_years
            )));
        }
        if self.exposure == 0 {
            return Err(Error::invalid("exposure must be positive"));
        }
        if self.inceptions > self.exposure {
            return Err(Error::invalid(format!(
                "inceptions ({}) exceed exposure ({})",
                self.inceptions, self.exposure
            )));
        }
        Ok(())
    }

    /// Continuity-corrected rate `(D + ½) / (E + 1)`.
    pub fn corrected_rate(&self) -> f64 {
        (self.inceptions as f64 + 0.5) / (self.exposure as f64 + 1.0)
    }
}

/// `(gender dummy, age / 100)`. The only place years become centuries.
pub fn to_covariate(record: &CohortRecord) -> Result<Covariate> {
    Covariate::new(record.gender.dummy(), record.age_years / 100.0)
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Logit of the continuity-corrected inception rate.
pub fn logit_target(record: &CohortRecord) -> Result<f64> {
    if record.exposure == 0 {
        return Err(Error::invalid(format!(
            "group {}: exposure must be positive",
            record.group_id
        )));
    }
    let d = record.inceptions as f64 + 0.5;
    let e = record.exposure as f64 + 1.0;
    Ok((d / (e - d)).ln())
}

/// Logistic function `1 / (1 + e^{−v})`, evaluated without overflow.
pub fn inverse_logit(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// A validated list of cohorts with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<CohortRecord>,
}

impl Dataset {
    pub fn new(records: Vec<CohortRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            r.validate()
                .map_err(|e| Error::invalid(format!("group {}: {e}", r.group_id)))?;
            if !seen.insert(r.group_id.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate group_id '{}'",
                    r.group_id
                )));
            }
        }
        Ok(Dataset { records })
    }

    pub fn records(&self) -> &[CohortRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn covariates(&self) -> Result<Vec<Covariate>> {
        self.records.iter().map(to_covariate).collect()
    }

    pub fn logit_targets(&self) -> Result<Vec<f64>> {
        self.records.iter().map(logit_target).collect()
    }

    pub fn exposures(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.exposure as f64).collect()
    }

    /// Subset by index, in the given order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    pub fn from_csv_path(path: &Path) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file).map_err(|e| match e {
            Error::Ingest { row, message, .. } => Error::Ingest {
                path: Some(path.to_path_buf()),
                row,
                message,
            },
            other => other,
        })
    }

    /// Parses the cohort CSV. The header must be exactly
    /// `group_id,gender,age_years,exposure,inceptions`.
    pub fn from_csv_reader<R: Read>(r: R) -> Result<Dataset> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(r);
        let header = reader.headers()?.clone();
        check_header(&header)?;

        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (idx, rec) in reader.records().enumerate() {
            let row = idx + 2;
            let rec = rec.map_err(|e| Error::ingest(Some(row), e.to_string()))?;
            let field = |k: usize| rec.get(k).unwrap_or("");
            let group_id = field(0).to_string();
            if group_id.is_empty() {
                return Err(Error::ingest(Some(row), "empty group_id"));
            }
            let gender: Gender = field(1)
                .parse()
                .map_err(|e: Error| Error::ingest(Some(row), strip_prefix(e)))?;
            let age_years: f64 = field(2).parse().map_err(|_| {
                Error::ingest(
                    Some(row),
                    format!("age_years '{}' is not a number", field(2)),
                )
            })?;
            let exposure: u64 = field(3).parse().map_err(|_| {
                Error::ingest(
                    Some(row),
                    format!("exposure '{}' is not a non-negative integer", field(3)),
                )
            })?;
            let inceptions: u64 = field(4).parse().map_err(|_| {
                Error::ingest(
                    Some(row),
                    format!("inceptions '{}' is not a non-negative integer", field(4)),
                )
            })?;
            let record = CohortRecord {
                group_id,
                gender,
                age_years,
                exposure,
                inceptions,
            };
            record.validate().map_err(|e| {
                Error::ingest(
                    Some(row),
                    format!("group {}: {}", record.group_id, strip_prefix(e)),
                )
            })?;
            if !seen.insert(record.group_id.clone()) {
                return Err(Error::ingest(
                    Some(row),
                    format!("duplicate group_id '{}'", record.group_id),
                ));
            }
            records.push(record);
        }
        if records.is_empty() {
            return Err(Error::ingest(None, "no data rows"));
        }
        Ok(Dataset { records })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(CSV_HEADER)?;
        for r in &self.records {
            wtr.write_record([
                r.group_id.clone(),
                r.gender.code().to_string(),
                r.age_years.to_string(),
                r.exposure.to_string(),
                r.inceptions.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::InvalidArgument(m) => m,
        other => other.to_string(),
    }
}

fn check_header(header: &csv::StringRecord) -> Result<()> {
    let got: Vec<&str> = header.iter().collect();
    for col in CSV_HEADER {
        if !got.contains(&col) {
            return Err(Error::ingest(Some(1), format!("missing column '{col}'")));
        }
    }
    if got != CSV_HEADER {
        return Err(Error::ingest(
            Some(1),
            format!("header must be exactly '{}'", CSV_HEADER.join(",")),
        ));
    }
    Ok(())
}

/// `w_i = n · E_i / Σ E_j` (mean one).
pub fn sample_weights(exposures: &[f64]) -> Result<Vec<f64>> {
    if exposures.is_empty() {
        return Err(Error::invalid("no exposures"));
    }
    if exposures.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(Error::invalid("exposures must be finite and non-negative"));
    }
    let total: f64 = exposures.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("all exposures are zero"));
    }
    let n = exposures.len() as f64;
    Ok(exposures.iter().map(|e| n * e / total).collect())
}

/// Ground-truth inception probability surface for synthetic data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Surface {
    /// `logit p = intercept + age_slope · age_centuries + gender_effect · gender`.
    Logistic {
        intercept: f64,
        age_slope: f64,
        gender_effect: f64,
    },
    /// The same p for every group (0 and 1 allowed).
    Constant { p: f64 },
}

impl Surface {
    pub fn probability(&self, x: &Covariate) -> f64 {
        match *self {
            Surface::Logistic {
                intercept,
                age_slope,
                gender_effect,
            } => inverse_logit(
                intercept + age_slope * x.age_centuries() + gender_effect * x.gender(),
            ),
            Surface::Constant { p } => p,
        }
    }
}

/// Parameters of a synthetic portfolio. Defaults are artifact configuration,
/// not estimates from any real portfolio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub surface: Surface,
    pub age_min: f64,
    pub age_max: f64,
    pub exposure_min: u64,
    pub exposure_max: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            surface: Surface::Logistic {
                intercept: -5.0,
                age_slope: 3.0,
                gender_effect: 0.5,
            },
            age_min: 20.0,
            age_max: 60.0,
            exposure_min: 10_000,
            exposure_max: 100_000,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        match self.surface {
            Surface::Logistic {
                intercept,
                age_slope,
                gender_effect,
            } => {
                if ![intercept, age_slope, gender_effect]
                    .iter()
                    .all(|v| v.is_finite())
                {
                    return Err(Error::invalid("surface coefficients must be finite"));
                }
            }
            Surface::Constant { p } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::invalid(format!(
                        "constant p must lie in [0, 1], got {p}"
                    )));
                }
            }
        }
        if !(0.0 <= self.age_min && self.age_min <= self.age_max && self.age_max <= MAX_AGE_YEARS) {
            return Err(Error::invalid(format!(
                "need 0 <= age_min <= age_max <= {MAX_AGE_YEARS}, got [{}, {}]",
                self.age_min, self.age_max
            )));
        }
        if self.exposure_min == 0 || self.exposure_min > self.exposure_max {
            return Err(Error::invalid(format!(
                "need 1 <= exposure_min <= exposure_max, got [{}, {}]",
                self.exposure_min, self.exposure_max
            )));
        }
        Ok(())
    }
}

/// Synthetic cohorts: `n_groups / 2` (rounded down) female groups followed by
/// the male groups, each gender spanning `[age_min, age_max]` evenly. Exposure
/// follows a parabola peaking at mid-age with up to 10% multiplicative jitter,
/// and `D_i` is drawn from `Bin(E_i, p(x_i))`.
pub fn synth_dataset(n_groups: usize, seed: u64, scenario: &Scenario) -> Result<Dataset> {
    if n_groups < 2 {
        return Err(Error::invalid("need at least 2 groups"));
    }
    scenario.validate()?;
    let n_female = n_groups / 2;
    let mut records = Vec::with_capacity(n_groups);
    for i in 0..n_groups {
        let (gender, k, count) = if i < n_female {
            (Gender::Female, i, n_female)
        } else {
            (Gender::Male, i - n_female, n_groups - n_female)
        };
        let age = if count > 1 {
            scenario.age_min + (scenario.age_max - scenario.age_min) * k as f64 / (count - 1) as f64
        } else {
            0.5 * (scenario.age_min + scenario.age_max)
        };
        // round to 0.01 year so the CSV round-trip is exact
        let age_years = (age * 100.0).round() / 100.0;

        let mut rng = rng_from_seed(entry_seed(seed, i as u64, 0));
        let mid = 0.5 * (scenario.age_min + scenario.age_max);
        let half = 0.5 * (scenario.age_max - scenario.age_min);
        let bump = if half > 0.0 {
            (1.0 - ((age_years - mid) / half).powi(2)).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let jitter = 0.9 + 0.1 * rng.random::<f64>();
        let span = (scenario.exposure_max - scenario.exposure_min) as f64;
        let exposure = (scenario.exposure_min as f64 + span * bump * jitter).round() as u64;
        let exposure = exposure.clamp(scenario.exposure_min, scenario.exposure_max);

        let x = Covariate::new(gender.dummy(), age_years / 100.0)?;
        let p = scenario.surface.probability(&x);
        let inceptions = Binomial::new(exposure, p)
            .map_err(|e| Error::invalid(format!("binomial({exposure}, {p}): {e}")))?
            .sample(&mut rng);
        records.push(CohortRecord {
            group_id: format!("{}{:03}", gender.code(), k),
            gender,
            age_years,
            exposure,
            inceptions,
        });
    }
    Dataset::new(records)
}
