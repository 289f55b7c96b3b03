use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qsvr::kernel::read_matrix_csv;
use qsvr::{
    classical_kernel, inverse_logit, kernel_matrix, kkt_check, Dataset, KernelSpec, SvrModel,
};
use tempfile::TempDir;

fn qsvr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsvr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = qsvr(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &TempDir, name: &str, n: usize, seed: u64) -> PathBuf {
    let out = p(dir, name);
    ok(&[
        "synth",
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        s(&out),
    ]);
    out
}

fn read_kernel(path: &Path) -> nalgebra::DMatrix<f64> {
    read_matrix_csv(fs::File::open(path).unwrap()).unwrap()
}

#[test]
fn synth_is_reproducible_and_reingests() {
    let dir = TempDir::new().unwrap();
    let a = synth(&dir, "a.csv", 81, 1);
    let b = synth(&dir, "b.csv", 81, 1);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let data = Dataset::from_csv_path(&a).unwrap();
    assert_eq!(data.len(), 81);
    let k = p(&dir, "k.csv");
    ok(&["kernel", "--data", s(&a), "--out", s(&k)]);
    assert_eq!(read_kernel(&k).nrows(), 81);
}

#[test]
fn synth_zero_probability_has_no_inceptions() {
    let dir = TempDir::new().unwrap();
    let out = p(&dir, "z.csv");
    ok(&["synth", "--n", "12", "--constant-p", "0", "--out", s(&out)]);
    let data = Dataset::from_csv_path(&out).unwrap();
    assert!(data.records().iter().all(|r| r.inceptions == 0));
}

#[test]
fn statevector_kernel_has_unit_diagonal() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "d.csv");
    fs::write(
        &data,
        "group_id,gender,age_years,exposure,inceptions\na,F,30,100,2\nb,M,40,200,5\nc,F,50,300,9\n",
    )
    .unwrap();
    let k = p(&dir, "k.csv");
    let stdout = ok(&[
        "kernel",
        "--data",
        s(&data),
        "--out",
        s(&k),
        "--method",
        "statevector",
    ]);
    assert!(stdout.contains("min eigenvalue"));
    let m = read_kernel(&k);
    assert_eq!((m.nrows(), m.ncols()), (3, 3));
    for i in 0..3 {
        assert!((m[(i, i)] - 1.0).abs() < 1e-12);
    }
    assert!(p(&dir, "k.meta.json").exists());
    assert!(p(&dir, "k.csv.manifest.json").exists());
}

#[test]
fn shots_kernel_reproducible() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "d.csv", 15, 2);
    let (a, b) = (p(&dir, "a.csv"), p(&dir, "b.csv"));
    for out in [&a, &b] {
        ok(&[
            "kernel",
            "--data",
            s(&data),
            "--out",
            s(out),
            "--method",
            "shots",
            "--shots",
            "8192",
            "--seed",
            "7",
        ]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn polynomial_kernel_matches_library() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "d.csv", 10, 3);
    let k = p(&dir, "k.csv");
    ok(&[
        "kernel",
        "--data",
        s(&data),
        "--out",
        s(&k),
        "--method",
        "polynomial",
        "--degree",
        "3",
        "--coef0",
        "1",
    ]);
    let m = read_kernel(&k);
    let x = Dataset::from_csv_path(&data).unwrap().covariates().unwrap();
    let spec = KernelSpec::new(qsvr::KernelMethod::Polynomial)
        .with_coef0(1.0)
        .resolve(&x);
    for i in 0..x.len() {
        for j in 0..x.len() {
            let want = classical_kernel(&x[i].to_array(), &x[j].to_array(), &spec).unwrap();
            assert!((m[(i, j)] - want).abs() <= 1e-15 * want.abs().max(1.0));
        }
    }
}

#[test]
fn loocv_writes_results_and_kernel_file_path_agrees() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "d.csv", 21, 4);
    let r1 = p(&dir, "r1.csv");
    let stdout = ok(&[
        "loocv",
        "--data",
        s(&data),
        "--out",
        s(&r1),
        "--method",
        "statevector",
    ]);
    assert!(stdout.contains("weighted R2 = "));
    let text = fs::read_to_string(&r1).unwrap();
    assert_eq!(text.lines().count(), 22);
    assert!(text.starts_with("group_id,gender,age_years,weight,observed_rate,predicted_rate\n"));
    assert!(p(&dir, "r1.json").exists());
    assert!(p(&dir, "r1.csv.manifest.json").exists());

    let k = p(&dir, "k.csv");
    ok(&[
        "kernel",
        "--data",
        s(&data),
        "--out",
        s(&k),
        "--method",
        "statevector",
    ]);
    let r2 = p(&dir, "r2.csv");
    ok(&[
        "loocv",
        "--data",
        s(&data),
        "--out",
        s(&r2),
        "--kernel-file",
        s(&k),
    ]);
    assert_eq!(text, fs::read_to_string(&r2).unwrap());
}

#[test]
fn missing_column_is_input_error() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "d.csv");
    fs::write(&data, "group_id,gender,age_years,exposure\na,F,30,100\n").unwrap();
    let out = qsvr(&["loocv", "--data", s(&data), "--out", s(&p(&dir, "r.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("inceptions"));
}

#[test]
fn bad_row_is_reported_with_row_number() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "d.csv");
    fs::write(
        &data,
        "group_id,gender,age_years,exposure,inceptions\na,F,30,100,2\nb,M,40,10,11\n",
    )
    .unwrap();
    let out = qsvr(&["kernel", "--data", s(&data), "--out", s(&p(&dir, "k.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 3"));
}

#[test]
fn missing_input_file_is_input_error() {
    let dir = TempDir::new().unwrap();
    let out = qsvr(&[
        "kernel",
        "--data",
        s(&p(&dir, "nope.csv")),
        "--out",
        s(&p(&dir, "k.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_error_exits_two() {
    assert_eq!(qsvr(&["loocv"]).status.code(), Some(2));
    assert_eq!(
        qsvr(&["kernel", "--data", "x", "--out", "y", "--method", "cubic"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn convergence_failure_exits_one_and_names_fold() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "d.csv", 12, 5);
    let out = qsvr(&[
        "loocv",
        "--data",
        s(&data),
        "--out",
        s(&p(&dir, "r.csv")),
        "--max-iterations",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fold"));
}

#[test]
fn fit_then_predict_reproduces_training_fit() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "d.csv", 20, 6);
    let model_path = p(&dir, "m.json");
    let stdout = ok(&["fit", "--data", s(&data), "--out", s(&model_path)]);
    assert!(stdout.contains("max KKT violation"));
    let json = fs::read_to_string(&model_path).unwrap();
    let model = SvrModel::from_json(&json).unwrap();
    assert_eq!(model.to_json().unwrap(), json);

    let ds = Dataset::from_csv_path(&data).unwrap();
    let y = ds.logit_targets().unwrap();
    let k = kernel_matrix(&model.training_inputs, &model.kernel_spec).unwrap();
    let report = kkt_check(
        k.values(),
        &y,
        &model.sample_weights,
        &model.alpha,
        model.beta,
        &model.config,
    )
    .unwrap();
    assert!(report.max_violation <= 1e-6);

    let preds = p(&dir, "p.csv");
    ok(&[
        "predict",
        "--model",
        s(&model_path),
        "--data",
        s(&data),
        "--out",
        s(&preds),
    ]);
    let mut rdr = csv::Reader::from_path(&preds).unwrap();
    let header = rdr.headers().unwrap().clone();
    assert_eq!(
        header.iter().collect::<Vec<_>>(),
        [
            "group_id",
            "gender",
            "age_years",
            "predicted_logit",
            "predicted_rate"
        ]
    );
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.unwrap();
        let f: f64 = rec[3].parse().unwrap();
        let expect: f64 = (0..y.len())
            .map(|j| model.alpha[j] * k.get(i, j))
            .sum::<f64>()
            + model.beta;
        assert!((f - expect).abs() < 1e-9, "row {i}: {f} vs {expect}");
        let rate: f64 = rec[4].parse().unwrap();
        assert!((rate - inverse_logit(f)).abs() < 1e-15);
    }
}

#[test]
fn zero_coefficient_model_predicts_constant() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "d.csv", 8, 7);
    let model_path = p(&dir, "m.json");
    ok(&["fit", "--data", s(&data), "--out", s(&model_path)]);
    let mut model = SvrModel::from_json(&fs::read_to_string(&model_path).unwrap()).unwrap();
    model.alpha.iter_mut().for_each(|a| *a = 0.0);
    model.beta = -2.5;
    fs::write(&model_path, model.to_json().unwrap()).unwrap();
    let preds = p(&dir, "p.csv");
    ok(&[
        "predict",
        "--model",
        s(&model_path),
        "--data",
        s(&data),
        "--out",
        s(&preds),
    ]);
    let mut rdr = csv::Reader::from_path(&preds).unwrap();
    for rec in rdr.records() {
        let rate: f64 = rec.unwrap()[4].parse().unwrap();
        assert_eq!(rate, inverse_logit(-2.5));
    }
}

#[test]
fn malformed_model_exits_two() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "d.csv", 8, 7);
    let model_path = p(&dir, "m.json");
    fs::write(&model_path, "{\"alpha\": [1.0]}").unwrap();
    let out = qsvr(&[
        "predict",
        "--model",
        s(&model_path),
        "--data",
        s(&data),
        "--out",
        s(&p(&dir, "p.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn digest_mismatch_warns() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "d.csv", 8, 7);
    let model_path = p(&dir, "m.json");
    ok(&["fit", "--data", s(&data), "--out", s(&model_path)]);
    let mut model = SvrModel::from_json(&fs::read_to_string(&model_path).unwrap()).unwrap();
    model.data_hash = "0".repeat(64);
    fs::write(&model_path, model.to_json().unwrap()).unwrap();
    let out = qsvr(&[
        "predict",
        "--model",
        s(&model_path),
        "--data",
        s(&data),
        "--out",
        s(&p(&dir, "p.csv")),
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

fn pgm_pixels(bytes: &[u8]) -> (usize, &[u8]) {
    let text = String::from_utf8_lossy(&bytes[..20]).to_string();
    let mut parts = text.split_whitespace();
    assert_eq!(parts.next(), Some("P5"));
    let w: usize = parts.next().unwrap().parse().unwrap();
    let header = format!("P5\n{w} {w}\n255\n");
    assert!(bytes.starts_with(header.as_bytes()));
    (w, &bytes[header.len()..])
}

#[test]
fn heatmap_of_identity() {
    let dir = TempDir::new().unwrap();
    let k = p(&dir, "id.csv");
    fs::write(&k, "1,0,0,0\n0,1,0,0\n0,0,1,0\n0,0,0,1\n").unwrap();
    let (a, b) = (p(&dir, "a.pgm"), p(&dir, "b.pgm"));
    ok(&["heatmap", "--kernel", s(&k), "--out", s(&a), "--scale", "3"]);
    ok(&["heatmap", "--kernel", s(&k), "--out", s(&b), "--scale", "3"]);
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    let (w, px) = pgm_pixels(&bytes);
    assert_eq!(w, 12);
    for y in 0..w {
        for x in 0..w {
            assert_eq!(px[y * w + x], if x / 3 == y / 3 { 255 } else { 0 });
        }
    }
    let svg = p(&dir, "a.svg");
    ok(&["heatmap", "--kernel", s(&k), "--out", s(&svg)]);
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn heatmap_rejects_non_square() {
    let dir = TempDir::new().unwrap();
    let k = p(&dir, "k.csv");
    fs::write(&k, "1,0,0\n0,1,0\n").unwrap();
    let out = qsvr(&["heatmap", "--kernel", s(&k), "--out", s(&p(&dir, "h.pgm"))]);
    assert!(!out.status.success());
}

#[test]
fn heatmap_shows_gender_blocks() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "d.csv", 81, 1);
    let k = p(&dir, "k.csv");
    ok(&["kernel", "--data", s(&data), "--out", s(&k)]);
    let img = p(&dir, "h.pgm");
    ok(&[
        "heatmap",
        "--kernel",
        s(&k),
        "--out",
        s(&img),
        "--scale",
        "1",
    ]);
    let bytes = fs::read(&img).unwrap();
    let (w, px) = pgm_pixels(&bytes);
    assert_eq!(w, 81);
    let (mut within, mut nw, mut cross, mut nc) = (0.0, 0, 0.0, 0);
    for y in 0..w {
        for x in 0..w {
            let v = px[y * w + x] as f64;
            if (y < 40) == (x < 40) {
                within += v;
                nw += 1;
            } else {
                cross += v;
                nc += 1;
            }
        }
    }
    assert!(within / nw as f64 > 1.5 * cross / nc as f64);
}

#[test]
fn threads_do_not_change_output() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "d.csv", 25, 9);
    let (a, b) = (p(&dir, "a.csv"), p(&dir, "b.csv"));
    ok(&[
        "--threads",
        "1",
        "loocv",
        "--data",
        s(&data),
        "--out",
        s(&a),
        "--method",
        "shots",
        "--seed",
        "7",
    ]);
    ok(&[
        "loocv",
        "--threads",
        "4",
        "--data",
        s(&data),
        "--out",
        s(&b),
        "--method",
        "shots",
        "--seed",
        "7",
    ]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn config_file_sets_defaults_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "d.csv", 10, 10);
    let cfg = p(&dir, "cfg.toml");
    fs::write(&cfg, "method = \"rbf\"\nepsilon = 0.1\n").unwrap();
    let a = p(&dir, "a.csv");
    ok(&[
        "--config",
        s(&cfg),
        "loocv",
        "--data",
        s(&data),
        "--out",
        s(&a),
    ]);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p(&dir, "a.json")).unwrap()).unwrap();
    assert_eq!(json["kernel_spec"]["method"], "rbf");
    assert_eq!(json["svr_config"]["epsilon"], 0.1);
    let b = p(&dir, "b.csv");
    ok(&[
        "--config",
        s(&cfg),
        "loocv",
        "--data",
        s(&data),
        "--out",
        s(&b),
        "--method",
        "linear",
    ]);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p(&dir, "b.json")).unwrap()).unwrap();
    assert_eq!(json["kernel_spec"]["method"], "linear");
    assert_eq!(json["svr_config"]["epsilon"], 0.1);

    fs::write(&cfg, "metod = \"rbf\"\n").unwrap();
    let out = qsvr(&[
        "--config",
        s(&cfg),
        "loocv",
        "--data",
        s(&data),
        "--out",
        s(&b),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn manifest_reproduces_synthetic_run() {
    let dir = TempDir::new().unwrap();
    let a = p(&dir, "a.csv");
    ok(&[
        "synth",
        "--n",
        "30",
        "--seed",
        "12",
        "--age-min",
        "25",
        "--out",
        s(&a),
    ]);
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p(&dir, "a.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "synth");
    assert_eq!(m["seed"], 12);
    assert!(m["timestamp"].as_u64().unwrap() > 0);
    let scenario: qsvr::Scenario = serde_json::from_value(m["scenario"].clone()).unwrap();
    let regen = qsvr::synth_dataset(30, 12, &scenario).unwrap();
    let mut buf = Vec::new();
    regen.write_csv(&mut buf).unwrap();
    assert_eq!(buf, fs::read(&a).unwrap());

    let k = p(&dir, "k.csv");
    ok(&["kernel", "--data", s(&a), "--out", s(&k)]);
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p(&dir, "k.csv.manifest.json")).unwrap()).unwrap();
    let sha = m["inputs"]["data"]["sha256"].as_str().unwrap();
    assert_eq!(sha, qsvr::digest::sha256_hex(&fs::read(&a).unwrap()));
}
