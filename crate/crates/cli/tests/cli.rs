use std::path::Path;
use std::process::{Command, Output};

fn fpf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fpf")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn run_into(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    fpf(&args)
}

#[test]
fn run_writes_outputs_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let out = run_into(d, &["--scenario", "pda-clutter", "--seed", "7"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in [
        "run.csv",
        "config.echo.json",
        "fig1_trajectory.csv",
        "fig1_measurements.csv",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let csv = std::fs::read_to_string(a.join("run.csv")).unwrap();
    assert!(csv.starts_with("time,truth_pos,truth_vel,meas_1,meas_2,meas_3,meas_4,est_pos,est_vel,beta_0,"));
    assert_eq!(csv.lines().count(), 101);
}

#[test]
fn echoed_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let out = run_into(
        &first,
        &["--scenario", "jpda-two-target", "--seed", "3", "--particles", "200"],
    );
    assert_eq!(code(&out), 0);
    let echo = first.join("config.echo.json");
    let again = tmp.path().join("again");
    let out = run_into(&again, &["--scenario", echo.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        std::fs::read(first.join("run.csv")).unwrap(),
        std::fs::read(again.join("run.csv")).unwrap()
    );
}

#[test]
fn overrides_reach_the_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "--scenario",
        "linear-1d",
        "--seed",
        "5",
        "--dt",
        "0.01",
        "--particles",
        "100",
        "--assoc-mode",
        "bayes",
        "--gain",
        "integral-1d",
        "--oracle",
        "kalman",
        "--oracle",
        "grid",
    ];
    let out = run_into(tmp.path(), &args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let echo = std::fs::read_to_string(tmp.path().join("config.echo.json")).unwrap();
    for want in [
        r#""seed": 5"#,
        r#""dt": 0.01"#,
        r#""particles": 100"#,
        r#""association": "bayes""#,
        r#""gain": "integral-1d""#,
    ] {
        assert!(echo.contains(want), "{want} missing from {echo}");
    }
    let header = std::fs::read_to_string(tmp.path().join("run.csv")).unwrap();
    let header = header.lines().next().unwrap();
    assert!(header.ends_with("kalman,kalman_var,grid,grid_var"), "{header}");
}

#[test]
fn batch_writes_one_directory_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_into(
        tmp.path(),
        &[
            "--scenario",
            "linear-1d",
            "--seed",
            "10",
            "--batch",
            "3",
            "--particles",
            "100",
        ],
    );
    assert_eq!(code(&out), 0);
    for s in 10..13 {
        assert!(tmp.path().join(format!("seed_{s}/run.csv")).is_file());
    }
    let summary = std::fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    assert!(summary.starts_with("seed,rmse\n10,"));
}

#[test]
fn plot_renders_svg() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&run_into(
            tmp.path(),
            &["--scenario", "jpda-two-target", "--seed", "1", "--particles", "100"]
        )),
        0
    );
    let svg = tmp.path().join("fig.svg");
    let out = fpf(&[
        "plot",
        "--in",
        tmp.path().join("run.csv").to_str().unwrap(),
        "--out",
        svg.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(svg).unwrap();
    assert!(text.starts_with("<svg") && text.contains("pi_1"));
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"kind": "linear-1d", "surprise": 1}"#).unwrap();
    for extra in [
        vec!["--scenario", "no-such-scenario", "--seed", "0"],
        vec!["--scenario", bad.to_str().unwrap(), "--seed", "0"],
        vec!["--scenario", "linear-1d", "--seed", "0", "--dt", "-1"],
        vec!["--scenario", "linear-1d", "--seed", "0", "--gain", "quadratic"],
        vec!["--scenario", "linear-1d", "--seed", "0", "--oracle", "oracle-of-delphi"],
        vec!["--scenario", "linear-1d", "--seed", "0", "--particles", "1"],
    ] {
        let out = run_into(tmp.path(), &extra);
        assert_eq!(code(&out), 2, "{extra:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn numerical_failure_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/linear-1d.json");
    let mut cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(shipped).unwrap()).unwrap();
    // x' = 50 x³ from x = 10 leaves the floats within a few steps.
    cfg["model"]["drift"] = serde_json::json!({"type": "named", "name": "cube", "scale": 50.0});
    cfg["truth_init"] = serde_json::json!([[10.0]]);
    cfg["kind"] = "custom".into();
    cfg["oracles"] = serde_json::json!([]);
    let path = tmp.path().join("blowup.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = run_into(
        &tmp.path().join("out"),
        &["--scenario", path.to_str().unwrap(), "--seed", "0"],
    );
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn io_errors_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fpf(&[
        "plot",
        "--in",
        tmp.path().join("missing.csv").to_str().unwrap(),
        "--out",
        "x.svg",
    ]);
    assert_eq!(code(&out), 4);
    let file = tmp.path().join("file");
    std::fs::write(&file, "").unwrap();
    let out = run_into(
        &file.join("sub"),
        &["--scenario", "linear-1d", "--seed", "0", "--particles", "10"],
    );
    assert_eq!(code(&out), 4);
}
