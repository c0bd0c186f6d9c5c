use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn trpca(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trpca"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = trpca(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn datagen(cwd: &Path, alpha: &str) {
    ok(
        &["datagen", "--out", "inst", "--n", "12", "--r", "2", "--alpha", alpha, "--seed", "7"],
        cwd,
    );
}

#[test]
fn datagen_then_solve() {
    let dir = tempfile::tempdir().unwrap();
    datagen(dir.path(), "0");
    for f in ["Y.tns3", "Xstar.tns3", "Sstar.tns3", "mask.tns3", "meta.json", "resolved_config.json"] {
        assert!(dir.path().join("inst").join(f).is_file(), "{f} missing");
    }
    let stdout = ok(
        &[
            "solve", "--input", "inst", "--out", "s", "--iterations", "60", "--zeta0", "1", "--zeta1", "0.001",
            "--rho", "0.9", "--eta", "0.4",
        ],
        dir.path(),
    );
    assert!(stdout.contains("relative error"));
    let trace = fs::read_to_string(dir.path().join("s/trace.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "t,loss_ssl,rel_error,zeta");
    assert_eq!(trace.lines().count(), 62);
    let last: Vec<&str> = trace.lines().last().unwrap().split(',').collect();
    let rel: f64 = last[2].parse().unwrap();
    assert!(rel < 1e-6, "noiseless recovery error {rel}");
    assert!(dir.path().join("s/X.tns3").is_file());
}

#[test]
fn fixed_seed_outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    datagen(dir.path(), "0.1");
    for out in ["a", "b"] {
        ok(
            &[
                "--threads", "1", "tune-baseline", "--input", "inst", "--out", out, "--iterations", "20", "--budget",
                "12", "--seed", "3",
            ],
            dir.path(),
        );
        ok(
            &[
                "--threads", "1", "phase-grid", "--out", &format!("{out}/grid"), "--alphas", "0,0.2", "--ranks", "2,3",
                "--n", "10", "--trials", "2", "--iterations", "15", "--method", "ssl-only", "--finetune-steps", "3",
                "--gradient", "forward-dual",
            ],
            dir.path(),
        );
    }
    for f in ["tune_log.csv", "params.json", "grid/grid.csv", "grid/heatmap.svg"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between runs");
    }
    let log = fs::read_to_string(dir.path().join("a/tune_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 13);
}

#[test]
fn flags_override_config_and_config_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.json"),
        r#"{"datagen": {"n": 9, "r": 2, "alpha": 0.3, "seed": 1}, "solve": {"iterations": 5}}"#,
    )
    .unwrap();
    ok(&["datagen", "--config", "run.json", "--out", "inst", "--alpha", "0.1"], dir.path());
    let resolved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("inst/resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["n"], 9);
    assert_eq!(resolved["alpha"], 0.1);
    assert_eq!(resolved["kappa"], 5.0);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("inst/meta.json")).unwrap()).unwrap();
    assert_eq!(meta["n"], 9);
    ok(&["solve", "--config", "run.json", "--input", "inst", "--out", "s"], dir.path());
    let trace = fs::read_to_string(dir.path().join("s/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 7);
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    datagen(dir.path(), "0.1");

    // Config: unknown key, missing input, incomplete hyperparameters.
    fs::write(dir.path().join("bad.json"), r#"{"iterationz": 3}"#).unwrap();
    let code = |args: &[&str]| trpca(args, dir.path()).status.code();
    assert_eq!(code(&["solve", "--config", "bad.json", "--input", "inst"]), Some(2));
    assert_eq!(code(&["finetune", "--out", "x"]), Some(2));
    assert_eq!(code(&["solve", "--input", "inst", "--out", "x", "--zeta0", "1"]), Some(2));
    assert_eq!(code(&["solve", "--input", "inst", "--out", "x", "--method", "nope"]), Some(2));

    // Data format: wrong magic, non-binary mask.
    fs::write(dir.path().join("junk.tns3"), b"NOTATENSOR").unwrap();
    assert_eq!(code(&["solve", "--input", "junk.tns3", "--rank", "2", "--out", "x"]), Some(3));
    assert_eq!(
        code(&["solve", "--input", "inst", "--mask", "inst/Y.tns3", "--out", "x"]),
        Some(3)
    );

    // Numerical: a step size far past the stability limit.
    let out = trpca(
        &[
            "solve", "--input", "inst", "--out", "div", "--zeta0", "1", "--zeta1", "1", "--rho", "0.9", "--eta",
            "1000", "--iterations", "200",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
    // The partial trace is kept for diagnosis.
    assert!(dir.path().join("div/trace.csv").is_file());
}

#[test]
fn finetune_train_and_sensitivity_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    datagen(dir.path(), "0.1");
    ok(
        &["train", "--out", "tr", "--n", "10", "--r", "2", "--iterations", "20", "--steps", "4", "--method", "forward-dual"],
        dir.path(),
    );
    let log = fs::read_to_string(dir.path().join("tr/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);
    let stdout = ok(
        &[
            "finetune", "--input", "inst", "--out", "ft", "--warm", "tr/params.json", "--iterations", "20", "--steps",
            "5", "--method", "forward-dual",
        ],
        dir.path(),
    );
    assert!(stdout.contains("->"));
    let params: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ft/params.json")).unwrap()).unwrap();
    for k in ["zeta0", "zeta1", "rho", "eta", "raw", "scale"] {
        assert!(params.get(k).is_some(), "params.json lacks {k}");
    }
    ok(&["solve", "--input", "inst", "--out", "s", "--iterations", "20", "--params", "ft/params.json"], dir.path());
    ok(
        &[
            "sensitivity", "--out", "se", "--n", "10", "--r", "2", "--instances", "4", "--iterations", "20",
            "--steps", "3", "--method", "forward-dual",
        ],
        dir.path(),
    );
    let csv = fs::read_to_string(dir.path().join("se/sensitivity.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "quartile,zeta0,zeta1,rho,eta");
}

#[test]
fn convert_stacks_pgm_frames() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    fs::create_dir(&frames).unwrap();
    for k in 0..3u8 {
        let mut bytes = b"P5\n# frame\n4 2\n255\n".to_vec();
        bytes.extend((0..8u8).map(|v| v * 10 + k));
        fs::write(frames.join(format!("f{k:02}.pgm")), bytes).unwrap();
    }
    let stdout = ok(&["convert", "--frames", "frames", "--out", "video"], dir.path());
    assert!(stdout.contains("2 x 4 x 3"));
    let bytes = fs::read(dir.path().join("video/Y.tns3")).unwrap();
    assert_eq!(&bytes[..4], b"TNS3");

    fs::write(frames.join("f99.pgm"), b"P2\n4 2\n255\n0 0 0 0 0 0 0 0\n").unwrap();
    let out = trpca(&["convert", "--frames", "frames", "--out", "video2"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}
