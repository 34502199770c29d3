use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn senskit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_senskit"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn simulate(dir: &Path) {
    ok(&senskit(
        &["simulate", "--q", "4", "--dims", "48,48", "--tau-gen", "2", "--noise", "0.01", "--seed", "5", "--output", "sim/s"],
        dir,
    ));
}

fn estimate(dir: &Path, out: &str, extra: &[&str]) {
    let mut args = vec!["estimate", "--input", "sim/s_kspace", "--calib", "20,20", "--output", out];
    args.extend_from_slice(extra);
    ok(&senskit(&args, dir));
}

#[test]
fn help_lists_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = senskit(&["estimate", "--help"], dir.path());
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    for needle in ["[default: 0.05]", "[default: 24]", "[default: 10]", "baseline rect, pisco ellipsoid", "[default: 3]"] {
        assert!(text.contains(needle), "help lacks {needle:?}:\n{text}");
    }
}

#[test]
fn unknown_flag_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(senskit(&["estimate", "--no-such-flag"], dir.path()).status.code(), Some(2));
    assert_eq!(senskit(&["simulate", "--dims", "7", "--output", "x"], dir.path()).status.code(), Some(2));
}

#[test]
fn simulate_writes_stacks() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    for name in ["s_kspace", "s_maps", "s_mask"] {
        let side = json(&dir.path().join(format!("sim/{name}.json")));
        assert_eq!(side["version"], 1);
        assert_eq!(side["dims"], serde_json::json!([48, 48]));
        let raw = fs::metadata(dir.path().join(format!("sim/{name}.craw"))).unwrap().len();
        let q = side["channels"].as_u64().unwrap();
        assert_eq!(raw, q * 48 * 48 * 8);
    }
    assert_eq!(json(&dir.path().join("sim/s_kspace.json"))["domain"], "kspace");
}

#[test]
fn estimate_outputs_and_self_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d);
    estimate(d, "est/a", &[]);
    for f in ["a_maps.json", "a_maps.craw", "a_mask.json", "a_lambda.json", "a_coil3.pgm", "a_spectrum.csv", "a_provenance.json"] {
        assert!(d.join("est").join(f).exists(), "{f} missing");
    }
    let pgm = fs::read(d.join("est/a_coil0.pgm")).unwrap();
    let header = b"P5\n48 48\n65535\n";
    assert_eq!(&pgm[..header.len()], header);
    assert_eq!(pgm.len(), header.len() + 48 * 48 * 2);

    let prov = json(&d.join("est/a_provenance.json"));
    let residual = prov["residual"].as_f64().unwrap();
    assert!(residual > 0.0 && residual < 0.1, "residual {residual}");
    assert_eq!(prov["config"]["kernel"], "rect");
    assert_eq!(prov["provenance"]["calib_dims"], serde_json::json!([20, 20]));

    ok(&senskit(&["compare", "est/a", "est/a", "--output", "cmp/self"], d));
    let c = json(&d.join("cmp/self.json"));
    assert_eq!(c["max_map_difference"].as_f64().unwrap(), 0.0);
    assert_eq!(c["mask_dice"].as_f64().unwrap(), 1.0);
    assert_eq!(c["residual_difference"].as_f64().unwrap(), 0.0);
    assert!(d.join("cmp/self_diff_coil0.pgm").exists());
}

#[test]
fn espirit_flag_matches_nullspace_method() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d);
    estimate(d, "est/n", &[]);
    estimate(d, "est/e", &["--method", "espirit"]);
    ok(&senskit(&["compare", "est/n", "est/e", "--output", "cmp/ne"], d));
    let c = json(&d.join("cmp/ne.json"));
    let diff = c["max_map_difference"].as_f64().unwrap();
    assert!(diff < 1e-6, "gauge-aligned difference {diff}");
}

#[test]
fn presets_agree_on_residual() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d);
    estimate(d, "est/b", &["--preset", "baseline"]);
    estimate(d, "est/p", &["--preset", "pisco"]);
    ok(&senskit(&["compare", "est/b", "est/p", "--output", "cmp/bp"], d));
    let c = json(&d.join("cmp/bp.json"));
    let diff = c["residual_difference"].as_f64().unwrap();
    assert!(diff < 0.01, "residual difference {diff}");
    assert_eq!(json(&d.join("est/p_provenance.json"))["config"]["eig"], "power");
}

#[test]
fn provenance_argv_reproduces_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d);
    estimate(d, "est/r", &["--preset", "pisco", "--tau", "2"]);
    let first = fs::read(d.join("est/r_maps.craw")).unwrap();
    let prov = json(&d.join("est/r_provenance.json"));
    let argv: Vec<String> = prov["argv"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    fs::remove_file(d.join("est/r_maps.craw")).unwrap();
    let args: Vec<&str> = argv[1..].iter().map(String::as_str).collect();
    ok(&senskit(&args, d));
    assert_eq!(fs::read(d.join("est/r_maps.craw")).unwrap(), first);
    assert_eq!(prov["config"]["tau"], 2);
}

#[test]
fn error_classes_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d);
    let code = |args: &[&str]| senskit(args, d).status.code();
    assert_eq!(code(&["estimate", "--input", "missing", "--calib", "20,20", "--output", "x"]), Some(3));
    assert_eq!(code(&["estimate", "--input", "sim/s_kspace", "--calib", "64,64", "--output", "x"]), Some(5));
    assert_eq!(
        code(&["estimate", "--input", "sim/s_kspace", "--calib", "20,20", "--nullspace-threshold", "1e-12", "--output", "x"]),
        Some(4)
    );
    assert_eq!(code(&["estimate", "--input", "sim/s_kspace", "--calib", "20,20", "--preset", "fast", "--output", "x"]), Some(2));

    // maps of different size
    ok(&senskit(&["simulate", "--q", "4", "--dims", "32,32", "--output", "small/s"], d));
    estimate(d, "est/big", &[]);
    ok(&senskit(&["estimate", "--input", "small/s_kspace", "--calib", "16,16", "--output", "est/small"], d));
    assert_eq!(code(&["compare", "est/big", "est/small", "--output", "cmp/x"]), Some(5));
}

#[test]
fn bench_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let common = ["bench", "--simulate", "--q", "3", "--dims", "32,32", "--calib-sizes", "12,14", "--threads", "1", "--output", "b/report"];
    let mut few: Vec<&str> = common.to_vec();
    few.extend_from_slice(&["--reps", "3"]);
    assert_eq!(senskit(&few, d).status.code(), Some(2));

    ok(&senskit(&common, d));
    let csv = fs::read_to_string(d.join("b/report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("calib_size,arm,stage,median_seconds,peak_bytes,residual"));
    let totals = csv.lines().filter(|l| l.split(',').nth(2) == Some("total")).count();
    assert_eq!(totals, 4);
    let report = json(&d.join("b/report.json"));
    assert_eq!(report["reps"], 5);
    assert_eq!(report["speedups"].as_array().unwrap().len(), 2);
    assert_eq!(senskit(&["bench", "--calib-sizes", "12", "--output", "b/none"], d).status.code(), Some(2));
}
