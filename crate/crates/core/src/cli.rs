//! The `qsvr` command line.
//!
//! Exit codes: 0 success, 1 runtime or convergence failure, 2 input/usage error.
//! Settings resolve as flags > `--config` TOML file > built-in defaults.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::digest::{covariate_digest, sha256_hex};
use crate::error::{Error, Result};
use crate::eval::{loocv_with_kernel, LoocvResult};
use crate::feature_map::Covariate;
use crate::inception::{
    inverse_logit, sample_weights, synth_dataset, Dataset, Gender, Scenario, Surface,
};
use crate::kernel::{
    kernel_matrix, KernelMatrix, KernelMethod, KernelSpec, DEFAULT_DEGREE, DEFAULT_SHOTS,
};
use crate::svr::{kkt_check, SvrConfig, SvrModel};

#[derive(Debug, Parser)]
#[command(
    name = "qsvr",
    version,
    about = "Quantum-kernel SVR for disability inception rates"
)]
pub struct Cli {
    /// Worker threads for kernel assembly and LOOCV folds (output does not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// TOML file with default settings; explicit flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute a kernel matrix and write it as CSV.
    Kernel(KernelCmd),
    /// Leave-one-out cross-validation with weighted out-of-sample R².
    Loocv(LoocvCmd),
    /// Fit a model on all rows and write it as JSON.
    Fit(FitCmd),
    /// Predict inception rates from a fitted model.
    Predict(PredictCmd),
    /// Generate a synthetic cohort CSV.
    Synth(SynthCmd),
    /// Render a kernel CSV as a grayscale heatmap (PGM, or SVG by extension).
    Heatmap(HeatmapCmd),
}

#[derive(Debug, Args, Default, Clone)]
pub struct KernelFlags {
    /// statevector, shots, linear, polynomial, rbf or sigmoid
    #[arg(long)]
    pub method: Option<KernelMethod>,
    #[arg(long)]
    pub shots: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub coef0: Option<f64>,
    #[arg(long)]
    pub degree: Option<u32>,
}

#[derive(Debug, Args, Default, Clone)]
pub struct SvrFlags {
    #[arg(long, allow_hyphen_values = true)]
    pub epsilon: Option<f64>,
    #[arg(long = "c", allow_hyphen_values = true)]
    pub c: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct KernelCmd {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub kernel: KernelFlags,
    /// Clip negative eigenvalues to zero before writing.
    #[arg(long)]
    pub clip_psd: bool,
}

#[derive(Debug, Args)]
pub struct LoocvCmd {
    #[arg(long)]
    pub data: PathBuf,
    /// Per-group results CSV; JSON goes next to it with a .json extension.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub kernel: KernelFlags,
    /// Reuse a precomputed kernel CSV instead of computing one.
    #[arg(long)]
    pub kernel_file: Option<PathBuf>,
    #[arg(long)]
    pub clip_psd: bool,
    #[command(flatten)]
    pub svr: SvrFlags,
}

#[derive(Debug, Args)]
pub struct FitCmd {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub kernel: KernelFlags,
    #[arg(long)]
    pub kernel_file: Option<PathBuf>,
    #[arg(long)]
    pub clip_psd: bool,
    #[command(flatten)]
    pub svr: SvrFlags,
}

#[derive(Debug, Args)]
pub struct PredictCmd {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with at least group_id, gender and age_years columns.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthCmd {
    #[arg(long, default_value_t = 81)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub intercept: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub age_slope: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub gender_effect: Option<f64>,
    /// Same inception probability for every group (overrides the logistic surface).
    #[arg(long)]
    pub constant_p: Option<f64>,
    #[arg(long)]
    pub age_min: Option<f64>,
    #[arg(long)]
    pub age_max: Option<f64>,
    #[arg(long)]
    pub exposure_min: Option<u64>,
    #[arg(long)]
    pub exposure_max: Option<u64>,
}

#[derive(Debug, Args)]
pub struct HeatmapCmd {
    #[arg(long)]
    pub kernel: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Pixels per matrix entry (default: enough for a ~400 px image).
    #[arg(long)]
    pub scale: Option<usize>,
}

/// Optional settings file. Every key is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub method: Option<KernelMethod>,
    pub shots: Option<u64>,
    pub seed: Option<u64>,
    pub gamma: Option<f64>,
    pub coef0: Option<f64>,
    pub degree: Option<u32>,
    pub epsilon: Option<f64>,
    pub c: Option<f64>,
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub threads: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = read_input(path)?;
        toml::from_str(&text).map_err(|e| Error::Ingest {
            path: Some(path.to_path_buf()),
            row: None,
            message: e.to_string(),
        })
    }

    fn kernel_spec(&self, flags: &KernelFlags) -> KernelSpec {
        KernelSpec {
            method: flags
                .method
                .or(self.method)
                .unwrap_or(KernelMethod::Statevector),
            shots: flags.shots.or(self.shots).unwrap_or(DEFAULT_SHOTS),
            seed: flags.seed.or(self.seed).unwrap_or(0),
            gamma: flags.gamma.or(self.gamma),
            coef0: flags.coef0.or(self.coef0).unwrap_or(0.0),
            degree: flags.degree.or(self.degree).unwrap_or(DEFAULT_DEGREE),
        }
    }

    fn svr_config(&self, flags: &SvrFlags) -> SvrConfig {
        let d = SvrConfig::default();
        SvrConfig {
            epsilon: flags.epsilon.or(self.epsilon).unwrap_or(d.epsilon),
            c: flags.c.or(self.c).unwrap_or(d.c),
            tolerance: flags.tolerance.or(self.tolerance).unwrap_or(d.tolerance),
            max_iterations: flags
                .max_iterations
                .or(self.max_iterations)
                .unwrap_or(d.max_iterations),
        }
    }
}

/// Provenance written next to every output as `<output>.manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Input role → SHA-256 of the file contents.
    pub inputs: BTreeMap<String, InputDigest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel_spec: Option<KernelSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub svr_config: Option<SvrConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    pub seed: Option<u64>,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            inputs: BTreeMap::new(),
            kernel_spec: None,
            svr_config: None,
            scenario: None,
            seed: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    fn input(&mut self, role: &str, path: &Path, bytes: &[u8]) {
        self.inputs.insert(
            role.to_string(),
            InputDigest {
                path: path.display().to_string(),
                sha256: sha256_hex(bytes),
            },
        );
    }

    fn write_for(&self, output: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)? + "\n";
        fs::write(manifest_path(output), json)?;
        Ok(())
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_os_string();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Ingest {
        path: Some(path.to_path_buf()),
        row: None,
        message: e.to_string(),
    })
}

fn load_dataset(path: &Path, manifest: &mut RunManifest, role: &str) -> Result<Dataset> {
    let text = read_input(path)?;
    manifest.input(role, path, text.as_bytes());
    Dataset::from_csv_reader(text.as_bytes()).map_err(|e| match e {
        Error::Ingest { row, message, .. } => Error::Ingest {
            path: Some(path.to_path_buf()),
            row,
            message,
        },
        other => other,
    })
}

/// Loads `--kernel-file` or computes the kernel from flags.
fn obtain_kernel(
    kernel_file: Option<&Path>,
    spec: &KernelSpec,
    x: &[Covariate],
    clip: bool,
    manifest: &mut RunManifest,
) -> Result<KernelMatrix> {
    let k = match kernel_file {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| Error::Ingest {
                path: Some(path.to_path_buf()),
                row: None,
                message: e.to_string(),
            })?;
            manifest.input("kernel", path, &bytes);
            let k = KernelMatrix::load(path, *spec)?;
            if k.n() != x.len() {
                return Err(Error::Ingest {
                    path: Some(path.to_path_buf()),
                    row: None,
                    message: format!(
                        "kernel is {0}x{0} but the data has {1} rows",
                        k.n(),
                        x.len()
                    ),
                });
            }
            let expected = covariate_digest(x);
            if !k.data_hash().is_empty() && k.data_hash() != expected {
                eprintln!(
                    "warning: {} was computed for different data (digest {} vs {})",
                    path.display(),
                    k.data_hash(),
                    expected
                );
            }
            k
        }
        None => kernel_matrix(x, spec)?,
    };
    Ok(if clip {
        k.clip_negative_eigenvalues()
    } else {
        k
    })
}

fn print_diagnostics(k: &KernelMatrix) {
    let d = k.diagnostics();
    println!(
        "n = {}  min eigenvalue = {:.6e}  symmetry defect = {:.3e}",
        k.n(),
        d.min_eigenvalue,
        d.symmetry_defect
    );
}

/// Suggestion printed after an error, if any.
pub fn hint(e: &Error) -> Option<&'static str> {
    match e {
        Error::NotConverged { .. } => Some("raise --max-iterations or loosen --tolerance"),
        Error::Fold { source, .. } => hint(source),
        _ => None,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let file_cfg = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let threads = cli.threads.or(file_cfg.threads);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::invalid("--threads must be at least 1"));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command, &file_cfg))
}

fn dispatch(cmd: Command, cfg: &FileConfig) -> Result<()> {
    match cmd {
        Command::Kernel(c) => cmd_kernel(c, cfg),
        Command::Loocv(c) => cmd_loocv(c, cfg),
        Command::Fit(c) => cmd_fit(c, cfg),
        Command::Predict(c) => cmd_predict(c),
        Command::Synth(c) => cmd_synth(c, cfg),
        Command::Heatmap(c) => cmd_heatmap(c),
    }
}

fn cmd_kernel(c: KernelCmd, cfg: &FileConfig) -> Result<()> {
    let mut manifest = RunManifest::new("kernel");
    let data = load_dataset(&c.data, &mut manifest, "data")?;
    let spec = cfg.kernel_spec(&c.kernel);
    let x = data.covariates()?;
    let k = obtain_kernel(None, &spec, &x, c.clip_psd, &mut manifest)?;
    k.save(&c.out)?;
    manifest.kernel_spec = Some(*k.spec());
    manifest.seed = Some(spec.seed);
    manifest.write_for(&c.out)?;
    print_diagnostics(&k);
    Ok(())
}

fn cmd_loocv(c: LoocvCmd, cfg: &FileConfig) -> Result<()> {
    let mut manifest = RunManifest::new("loocv");
    let data = load_dataset(&c.data, &mut manifest, "data")?;
    let spec = cfg.kernel_spec(&c.kernel);
    let config = cfg.svr_config(&c.svr);
    config.validate()?;
    let x = data.covariates()?;
    let k = obtain_kernel(
        c.kernel_file.as_deref(),
        &spec,
        &x,
        c.clip_psd,
        &mut manifest,
    )?;
    let result: LoocvResult = loocv_with_kernel(&data, &k, &config)?;

    let mut buf = Vec::new();
    result.write_csv(&mut buf)?;
    fs::write(&c.out, buf)?;
    fs::write(c.out.with_extension("json"), result.to_json()?)?;
    manifest.kernel_spec = Some(*k.spec());
    manifest.svr_config = Some(config);
    manifest.seed = Some(k.spec().seed);
    manifest.write_for(&c.out)?;

    match result.weighted_r2 {
        Some(r2) => println!(
            "weighted R2 = {r2:.6}  (kernel {}, n = {})",
            k.spec().method,
            data.len()
        ),
        None => println!(
            "weighted R2 = undefined (observed rates have zero weighted variance; n = {})",
            data.len()
        ),
    }
    Ok(())
}

fn cmd_fit(c: FitCmd, cfg: &FileConfig) -> Result<()> {
    let mut manifest = RunManifest::new("fit");
    let data = load_dataset(&c.data, &mut manifest, "data")?;
    let spec = cfg.kernel_spec(&c.kernel);
    let config = cfg.svr_config(&c.svr);
    let x = data.covariates()?;
    let k = obtain_kernel(
        c.kernel_file.as_deref(),
        &spec,
        &x,
        c.clip_psd,
        &mut manifest,
    )?;
    let y = data.logit_targets()?;
    let w = sample_weights(&data.exposures())?;
    let model = SvrModel::fit_with_kernel(&k, &x, &y, &w, &config)?;
    let report = kkt_check(k.values(), &y, &w, &model.alpha, model.beta, &config)?;
    fs::write(&c.out, model.to_json()?)?;
    manifest.kernel_spec = Some(model.kernel_spec);
    manifest.svr_config = Some(config);
    manifest.seed = Some(model.kernel_spec.seed);
    manifest.write_for(&c.out)?;
    println!(
        "beta = {:.6}  support vectors = {}  bounded = {}  max KKT violation = {:.3e}",
        model.beta, report.n_support, report.n_bounded, report.max_violation
    );
    Ok(())
}

/// Reads the covariate columns of a CSV; other columns are ignored.
fn read_prediction_input(text: &str) -> Result<Vec<(String, Gender, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::ingest(Some(1), format!("missing column '{name}'")))
    };
    let (ci, cg, ca) = (col("group_id")?, col("gender")?, col("age_years")?);
    let mut out = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let row = idx + 2;
        let rec = rec.map_err(|e| Error::ingest(Some(row), e.to_string()))?;
        let get = |k: usize| rec.get(k).unwrap_or("");
        let gender: Gender = get(cg)
            .parse()
            .map_err(|e: Error| Error::ingest(Some(row), e.to_string()))?;
        let age: f64 = get(ca).parse().map_err(|_| {
            Error::ingest(
                Some(row),
                format!("age_years '{}' is not a number", get(ca)),
            )
        })?;
        out.push((get(ci).to_string(), gender, age));
    }
    Ok(out)
}

fn cmd_predict(c: PredictCmd) -> Result<()> {
    let mut manifest = RunManifest::new("predict");
    let model_text = read_input(&c.model)?;
    manifest.input("model", &c.model, model_text.as_bytes());
    let model = SvrModel::from_json(&model_text).map_err(|e| Error::Ingest {
        path: Some(c.model.clone()),
        row: None,
        message: format!("malformed model: {e}"),
    })?;
    if covariate_digest(&model.training_inputs) != model.data_hash {
        eprintln!(
            "warning: {}: training-data digest does not match the stored training inputs",
            c.model.display()
        );
    }
    let text = read_input(&c.data)?;
    manifest.input("data", &c.data, text.as_bytes());
    let rows = read_prediction_input(&text).map_err(|e| match e {
        Error::Ingest { row, message, .. } => Error::Ingest {
            path: Some(c.data.clone()),
            row,
            message,
        },
        other => other,
    })?;

    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record([
        "group_id",
        "gender",
        "age_years",
        "predicted_logit",
        "predicted_rate",
    ])?;
    for (row_idx, (id, gender, age)) in rows.iter().enumerate() {
        let x = Covariate::new(gender.dummy(), age / 100.0)
            .map_err(|e| Error::ingest(Some(row_idx + 2), e.to_string()))?;
        let f = model.predict(&x)?;
        wtr.write_record([
            id.clone(),
            gender.code().to_string(),
            age.to_string(),
            crate::kernel::fmt_sig17(f),
            crate::kernel::fmt_sig17(inverse_logit(f)),
        ])?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    fs::write(&c.out, bytes)?;
    manifest.kernel_spec = Some(model.kernel_spec);
    manifest.svr_config = Some(model.config);
    manifest.seed = Some(model.kernel_spec.seed);
    manifest.write_for(&c.out)?;
    println!("wrote {} predictions", rows.len());
    Ok(())
}

fn cmd_synth(c: SynthCmd, cfg: &FileConfig) -> Result<()> {
    let mut manifest = RunManifest::new("synth");
    let d = Scenario::default();
    let surface = match c.constant_p {
        Some(p) => Surface::Constant { p },
        None => {
            let Surface::Logistic {
                intercept,
                age_slope,
                gender_effect,
            } = d.surface
            else {
                unreachable!("default surface is logistic")
            };
            Surface::Logistic {
                intercept: c.intercept.unwrap_or(intercept),
                age_slope: c.age_slope.unwrap_or(age_slope),
                gender_effect: c.gender_effect.unwrap_or(gender_effect),
            }
        }
    };
    let scenario = Scenario {
        surface,
        age_min: c.age_min.unwrap_or(d.age_min),
        age_max: c.age_max.unwrap_or(d.age_max),
        exposure_min: c.exposure_min.unwrap_or(d.exposure_min),
        exposure_max: c.exposure_max.unwrap_or(d.exposure_max),
    };
    let seed = c.seed.or(cfg.seed).unwrap_or(0);
    let data = synth_dataset(c.n, seed, &scenario)?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    fs::write(&c.out, buf)?;
    manifest.scenario = Some(scenario);
    manifest.seed = Some(seed);
    manifest.write_for(&c.out)?;
    println!("wrote {} groups", data.len());
    Ok(())
}

fn cmd_heatmap(c: HeatmapCmd) -> Result<()> {
    let mut manifest = RunManifest::new("heatmap");
    let bytes = fs::read(&c.kernel).map_err(|e| Error::Ingest {
        path: Some(c.kernel.clone()),
        row: None,
        message: e.to_string(),
    })?;
    manifest.input("kernel", &c.kernel, &bytes);
    let m = crate::kernel::read_matrix_csv(&bytes[..]).map_err(|e| match e {
        Error::Ingest { row, message, .. } => Error::Ingest {
            path: Some(c.kernel.clone()),
            row,
            message,
        },
        other => other,
    })?;
    if !m.is_square() {
        return Err(Error::Ingest {
            path: Some(c.kernel.clone()),
            row: None,
            message: format!("kernel must be square, got {}x{}", m.nrows(), m.ncols()),
        });
    }
    let n = m.nrows();
    let scale = c.scale.unwrap_or_else(|| (400 / n).max(1));
    if scale == 0 {
        return Err(Error::invalid("--scale must be at least 1"));
    }
    let is_svg = c
        .out
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("svg"));
    let image = if is_svg {
        heatmap_svg(&m, scale)
    } else {
        heatmap_pgm(&m, scale)
    };
    fs::write(&c.out, image)?;
    manifest.write_for(&c.out)?;
    println!("wrote {}x{} heatmap", n * scale, n * scale);
    Ok(())
}

/// 0 → black, 1 → white; values outside [0, 1] are clamped.
pub fn gray_level(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PGM (P5), `scale`×`scale` pixels per entry.
pub fn heatmap_pgm(m: &nalgebra::DMatrix<f64>, scale: usize) -> Vec<u8> {
    let n = m.nrows();
    let side = n * scale;
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    for py in 0..side {
        for px in 0..side {
            out.push(gray_level(m[(py / scale, px / scale)]));
        }
    }
    out
}

pub fn heatmap_svg(m: &nalgebra::DMatrix<f64>, scale: usize) -> Vec<u8> {
    let n = m.nrows();
    let side = n * scale;
    let mut out = Vec::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{side}\" height=\"{side}\" shape-rendering=\"crispEdges\">"
    );
    for i in 0..n {
        for j in 0..n {
            let g = gray_level(m[(i, j)]);
            let _ = writeln!(
                out,
                "<rect x=\"{}\" y=\"{}\" width=\"{scale}\" height=\"{scale}\" fill=\"rgb({g},{g},{g})\"/>",
                j * scale,
                i * scale
            );
        }
    }
    let _ = writeln!(out, "</svg>");
    out
}
