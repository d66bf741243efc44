use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bayesflow::synthetic::{self, SyntheticConfig};

const SHORT: [&str; 6] = ["--chains", "2", "--warmup", "150", "--draws", "100"];

fn bayesflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bayesflow"))
        .current_dir(dir)
        .env_remove("BAYESFLOW_OUTPUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_data(dir: &Path, name: &str, seed: u64) -> PathBuf {
    let records = synthetic::generate_records(&SyntheticConfig {
        n_languages: 3,
        n_projects: 10,
        n_rows: 24,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let path = dir.join(name);
    std::fs::write(&path, synthetic::to_csv(&records)).unwrap();
    path
}

/// Short M2 fit in `dir/out`; returns the archive path.
fn short_fit(dir: &Path) -> PathBuf {
    write_data(dir, "data.csv", 3);
    let mut args = vec!["fit", "--data", "data.csv", "--model", "M2", "-o", "out"];
    args.extend(SHORT);
    let o = bayesflow(dir, &args);
    assert!(matches!(code(&o), 0 | 1), "{}", stderr(&o));
    dir.join("out/fit-m2.json")
}

#[test]
fn usage_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&bayesflow(tmp.path(), &["--help"])), 0);
    assert_eq!(code(&bayesflow(tmp.path(), &["frobnicate"])), 3);
    assert_eq!(code(&bayesflow(tmp.path(), &["summary"])), 3);
    assert_eq!(
        code(&bayesflow(
            tmp.path(),
            &["fit", "--model", "M7", "--data", "x.csv"]
        )),
        3
    );
    write_data(tmp.path(), "data.csv", 1);
    assert_eq!(
        code(&bayesflow(
            tmp.path(),
            &["fit", "--data", "data.csv", "--model", "Toy"]
        )),
        3
    );
    assert_eq!(
        code(&bayesflow(
            tmp.path(),
            &["--threads", "0", "summary", "--data", "data.csv"]
        )),
        3
    );
}

#[test]
fn summary_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    write_data(tmp.path(), "data.csv", 1);
    let o = bayesflow(tmp.path(), &["summary", "--data", "data.csv", "-o", "out"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("24 rows, 3 languages, 10 projects"));
    assert!(tmp.path().join("out/summary.csv").exists());
    assert!(tmp.path().join("out/summary.json").exists());
}

#[test]
fn corrupt_csv_is_input_error_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("bad.csv"),
        "project,language,commits,insertions,age,devs,bugs\np,C,10,2,3,4,5\np,Go,10,x,3,4,5\n",
    )
    .unwrap();
    let o = bayesflow(tmp.path(), &["summary", "--data", "bad.csv"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    let o = bayesflow(tmp.path(), &["summary", "--data", "missing.csv"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn diagnose_reproduces_archive_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let archive = short_fit(tmp.path());
    let o = bayesflow(
        tmp.path(),
        &[
            "diagnose",
            "--archive",
            archive.to_str().unwrap(),
            "-o",
            "again",
        ],
    );
    assert!(matches!(code(&o), 0 | 1), "{}", stderr(&o));
    for f in ["fit-m2-diagnostics.csv", "fit-m2-diagnostics.json"] {
        let a = std::fs::read(tmp.path().join("out").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("again").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn tampered_archive_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let archive = short_fit(tmp.path());
    let text = std::fs::read_to_string(&archive).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["draws"]["samples"][0] = serde_json::json!(123.0);
    std::fs::write(&archive, v.to_string()).unwrap();
    let o = bayesflow(
        tmp.path(),
        &["diagnose", "--archive", archive.to_str().unwrap()],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("do not match"));
}

#[test]
fn single_chain_fit_reports_rhat_unavailable() {
    let tmp = tempfile::tempdir().unwrap();
    write_data(tmp.path(), "data.csv", 3);
    let o = bayesflow(
        tmp.path(),
        &[
            "fit", "--data", "data.csv", "--model", "M1", "--chains", "1", "--warmup", "100",
            "--draws", "100",
        ],
    );
    assert_eq!(code(&o), 1);
    assert!(
        stdout(&o).contains("max R-hat unavailable"),
        "{}",
        stdout(&o)
    );
    assert!(tmp.path().join("bayesflow-out/fit-m1.json").exists());
}

#[test]
fn analysis_commands_check_fingerprint_and_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    let archive = short_fit(tmp.path());
    let archive = archive.to_str().unwrap();
    write_data(tmp.path(), "other.csv", 4);
    let o = bayesflow(
        tmp.path(),
        &[
            "--force",
            "rank",
            "--archive",
            archive,
            "--data",
            "other.csv",
        ],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("fingerprint"));

    let passed = bayesflow(tmp.path(), &["diagnose", "--archive", archive])
        .status
        .success();
    let o = bayesflow(
        tmp.path(),
        &[
            "rank",
            "--archive",
            archive,
            "--data",
            "data.csv",
            "-o",
            "rank",
        ],
    );
    if passed {
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    } else {
        assert_eq!(code(&o), 1);
        assert!(stderr(&o).contains("--force"));
    }
    let o = bayesflow(
        tmp.path(),
        &[
            "--force",
            "rank",
            "--archive",
            archive,
            "--data",
            "data.csv",
            "-o",
            "rank",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(tmp.path().join("rank/rank-q0.50.svg").exists());
}

#[test]
fn negative_scenario_is_rejected_before_loading() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bayesflow(
        tmp.path(),
        &[
            "scenario",
            "--archive",
            "no-such.json",
            "--data",
            "no-such.csv",
            "--commits",
            "10",
            "--insertions",
            "100",
            "--age",
            "30",
            "--devs",
            "-2",
        ],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("devs"), "{}", stderr(&o));
}

#[test]
fn empty_plot_input_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("empty.csv"), "").unwrap();
    std::fs::write(tmp.path().join("header.csv"), "simulation,row,value\n").unwrap();
    std::fs::write(tmp.path().join("wrong.csv"), "a,b\n1,2\n").unwrap();
    for (file, expected) in [("empty.csv", 3), ("header.csv", 3), ("wrong.csv", 2)] {
        let o = bayesflow(
            tmp.path(),
            &["plot", "--kind", "density-overlay", "--input", file],
        );
        assert_eq!(code(&o), expected, "{file}: {}", stderr(&o));
    }
}

#[test]
fn posterior_overlay_has_one_thick_curve_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let archive = short_fit(tmp.path());
    let o = bayesflow(
        tmp.path(),
        &[
            "--force",
            "posterior-check",
            "--archive",
            archive.to_str().unwrap(),
            "--data",
            "data.csv",
            "--n-sims",
            "100",
            "-o",
            "ppc",
        ],
    );
    assert!(matches!(code(&o), 0 | 1), "{}", stderr(&o));
    let svg = std::fs::read_to_string(tmp.path().join("ppc/ppc-m2.svg")).unwrap();
    assert_eq!(svg.matches("class=\"simulated\"").count(), 100);
    assert_eq!(svg.matches("class=\"observed\"").count(), 1);

    let input = tmp.path().join("ppc/ppc-m2-density.csv");
    let mut outputs = Vec::new();
    for name in ["a.svg", "b.svg"] {
        let o = bayesflow(
            tmp.path(),
            &[
                "plot",
                "--kind",
                "density-overlay",
                "--input",
                input.to_str().unwrap(),
                "--output",
                name,
            ],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        outputs.push(std::fs::read(tmp.path().join(name)).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let replot = String::from_utf8(outputs.pop().unwrap()).unwrap();
    assert_eq!(replot.matches("class=\"simulated\"").count(), 100);
}

#[test]
fn single_model_workflow_has_nothing_to_compare() {
    let tmp = tempfile::tempdir().unwrap();
    write_data(tmp.path(), "data.csv", 3);
    let mut args = vec![
        "workflow", "--data", "data.csv", "--models", "M1", "--n-sims", "20", "-o", "wf",
    ];
    args.extend(SHORT);
    let o = bayesflow(tmp.path(), &args);
    assert!(matches!(code(&o), 0 | 1), "{}", stderr(&o));
    let md = std::fs::read_to_string(tmp.path().join("wf/workflow.md")).unwrap();
    assert!(md.contains("Nothing to compare"));
    for f in ["workflow.csv", "workflow.svg", "metadata.json"] {
        assert!(tmp.path().join("wf").join(f).exists(), "{f}");
    }
    let o = bayesflow(
        tmp.path(),
        &["workflow", "--data", "data.csv", "--models", "M1,M1"],
    );
    assert_eq!(code(&o), 3);
}

#[test]
fn output_directory_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let conf_dir = tmp.path().join("conf");
    std::fs::create_dir(&conf_dir).unwrap();
    write_data(&conf_dir, "data.csv", 1);
    std::fs::write(
        conf_dir.join("run.json"),
        r#"{"data": "data.csv", "output_dir": "from-config"}"#,
    )
    .unwrap();
    let run = |extra: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_bayesflow"));
        cmd.current_dir(tmp.path())
            .env_remove("BAYESFLOW_OUTPUT_DIR");
        if let Some(e) = env {
            cmd.env("BAYESFLOW_OUTPUT_DIR", e);
        }
        let o = cmd
            .args(["--config", "conf/run.json", "summary"])
            .args(extra)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    };
    run(&[], None);
    assert!(conf_dir.join("from-config/summary.csv").exists());
    run(&[], Some("from-env"));
    assert!(tmp.path().join("from-env/summary.csv").exists());
    run(&["-o", "from-flag"], Some("from-env"));
    assert!(tmp.path().join("from-flag/summary.csv").exists());

    std::fs::write(conf_dir.join("bad.json"), r#"{"dta": "data.csv"}"#).unwrap();
    let o = bayesflow(tmp.path(), &["--config", "conf/bad.json", "summary"]);
    assert_eq!(code(&o), 2);
}
