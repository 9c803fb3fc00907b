use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sksd::models::{init_mixing, test_nll, IcaProblem};
use sksd::Rng;

fn sksd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sksd")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn run_ok(args: &[&str]) {
    let out = sksd(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

const BENCH: &str = r#"{"alternative": "null", "dims": [2], "trials": 10, "bootstrap": 100,
    "n_samples": 100, "n_train": 20, "n_test": 80, "train_steps": 10, "methods": ["maxsksd-g"]}"#;

#[test]
fn benchmark_minimal_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "b.json", BENCH);
    let out = tmp.path().join("out");
    run_ok(&["gof-benchmark", "--config", &cfg, "--seed", "4", "--out", out.to_str().unwrap()]);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "method,benchmark,dim,rejection_rate,mean_statistic,sd_statistic");
    assert_eq!(lines.len(), 2);
    let rate: f64 = lines[1].split(',').nth(3).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&rate));
    let trials = fs::read_to_string(out.join("trials.csv")).unwrap();
    assert!(trials.starts_with("method,benchmark,dim,trial,statistic,p_value,reject\n"));
    assert_eq!(trials.lines().count(), 11);
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["seed"], 4);
    assert_eq!(run["config"]["dims"][0], 2);
    assert_eq!(run["config"]["alpha"], 0.05);
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "b.json", &BENCH.replace(r#"["maxsksd-g"]"#, r#"["ksd", "maxsksd-g", "maxsksd-rg"]"#));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_ok(&["gof-benchmark", "--config", &cfg, "--seed", "9", "--out", a.to_str().unwrap(), "--workers", "1"]);
    run_ok(&["gof-benchmark", "--config", &cfg, "--seed", "9", "--out", b.to_str().unwrap(), "--workers", "3"]);
    for f in ["summary.csv", "trials.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_and_out_come_from_the_file_unless_overridden() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("from_file");
    let text = BENCH.replacen('{', &format!(r#"{{"seed": 5, "out": {:?}, "#, out.to_str().unwrap()), 1);
    let cfg = write(tmp.path(), "b.json", &text);
    run_ok(&["gof-benchmark", "--config", &cfg]);
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["seed"], 5);
    let flagged = tmp.path().join("flagged");
    run_ok(&["gof-benchmark", "--config", &cfg, "--seed", "6", "--out", flagged.to_str().unwrap()]);
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(flagged.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["seed"], 6);
}

#[test]
fn config_errors_exit_2_with_one_line_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cases = [
        ("gof-benchmark", r#"{"alternative": "null", "dims": [2], "trials": "x"}"#, "trials"),
        ("gof-benchmark", r#"{"alternative": "null", "dims": [2], "adam": {"lr": 0}}"#, "adam"),
        ("ica", r#"{"dim": 3, "batch": 1}"#, "batch"),
        ("ica", r#"{"dim": 3, "objective": "maxsksd-rg"}"#, "objective"),
        ("variance", r#"{"dims": [2], "particles": [1]}"#, "particles"),
        ("svgd", r#"{"model": {"variant": "laplace"}, "particles": 5, "steps": 1}"#, "model.mean"),
        ("sghmc-select", r#"{"selection": {"candidates": [0.1], "methods": ["ksd"]}}"#, "target"),
        ("gof-rbm", r#"{"visible": 2, "hidden": 2, "levels": [0.1], "trials": 0}"#, "trials"),
        ("ica", "{not json", "<root>"),
    ];
    for (cmd, text, field) in cases {
        let cfg = write(tmp.path(), "c.json", text);
        let o = sksd(&[cmd, "--config", &cfg, "--seed", "1", "--out", out.to_str().unwrap()]);
        let err = String::from_utf8_lossy(&o.stderr);
        assert_eq!(o.status.code(), Some(2), "{cmd} {text}: {err}");
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
        assert!(err.contains(&format!("`{field}`")), "{cmd}: expected `{field}` in {err}");
    }
    assert!(!out.exists());
    let cfg = write(tmp.path(), "c.json", BENCH);
    assert_eq!(sksd(&["gof-benchmark", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(sksd(&["gof-benchmark", "--config", &cfg, "--seed", "1"]).status.code(), Some(2));
    assert_eq!(sksd(&["gof-benchmark", "--seed", "1"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "s.json",
        r#"{"target": {"variant": "gaussian", "mean": [0, 0], "cov_diag": [1, 1]},
            "selection": {"candidates": [5.0], "methods": ["ksd"], "chain": {"n_chains": 5, "burn_in": 200, "n_samples": 20}}}"#,
    );
    let o = sksd(&["sghmc-select", "--config", &cfg, "--seed", "1", "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
}

#[test]
fn ica_with_zero_steps_reports_the_initial_nll() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "i.json", r#"{"dim": 3, "steps": 0, "n_train": 200, "n_test": 100}"#);
    let out = tmp.path().join("o");
    run_ok(&["ica", "--config", &cfg, "--seed", "11", "--out", out.to_str().unwrap()]);
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "step,objective,test_nll");
    let nll: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
    let problem = IcaProblem::generate(3, 200, 100, &mut Rng::new(11).fork(0)).unwrap();
    let w0 = init_mixing(3, &mut Rng::new(11).fork(1).fork(10)).unwrap();
    assert_eq!(nll, test_nll(&w0, &problem.test).unwrap());
    let cp: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("checkpoint.json")).unwrap()).unwrap();
    assert_eq!(cp["step"], 0);
    assert_eq!(cp["W"].as_array().unwrap().len(), 3);
}

#[test]
fn sghmc_selection_names_the_small_step_under_gross_bias() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "s.json",
        r#"{"target": {"variant": "gaussian", "mean": [0, 0, 0], "cov_diag": [0.0026, 0.0026, 0.0026]},
            "selection": {"candidates": [1e-4, 1e-1], "methods": ["ksd", "maxsksd-g"],
                          "chain": {"n_chains": 50, "burn_in": 500, "n_samples": 500, "init_scale": 0.051}}}"#,
    );
    let out = tmp.path().join("o");
    run_ok(&["sghmc-select", "--config", &cfg, "--seed", "7", "--out", out.to_str().unwrap()]);
    let sel = fs::read_to_string(out.join("selection.csv")).unwrap();
    assert_eq!(sel, "method,step_size\nksd,0.0001\nmaxsksd-g,0.0001\nkl-oracle,0.0001\n");
    let table = fs::read_to_string(out.join("step_sizes.csv")).unwrap();
    assert!(table.starts_with("step_size,ksd,maxsksd-g,kl\n"));
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn svgd_and_variance_write_their_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "v.json",
        r#"{"model": {"variant": "gaussian", "mean": [0, 0], "cov_diag": [1, 1]}, "particles": 20, "steps": 30,
            "init_mean": 2, "config": {"step_size": 0.1, "diagnostics_every": 10}}"#,
    );
    let out = tmp.path().join("s");
    run_ok(&["svgd", "--config", &cfg, "--seed", "1", "--out", out.to_str().unwrap()]);
    let diag = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().next(), Some("iter,parf,var_avg"));
    assert_eq!(diag.lines().count(), 4);
    let particles = fs::read_to_string(out.join("particles.csv")).unwrap();
    assert_eq!(particles.lines().next(), Some("x0,x1"));
    assert_eq!(particles.lines().count(), 21);
    assert!(out.join("slices.json").exists());

    let cfg = write(tmp.path(), "w.json", r#"{"dims": [2, 3], "particles": [10], "step_sizes": [0.1], "steps": 20}"#);
    let out = tmp.path().join("v");
    run_ok(&["variance", "--config", &cfg, "--seed", "1", "--out", out.to_str().unwrap()]);
    let table = fs::read_to_string(out.join("variance.csv")).unwrap();
    assert_eq!(table.lines().next(), Some("sampler,dim,particles,step_size,var_avg,parf"));
    assert_eq!(table.lines().count(), 5);
}

#[test]
fn rbm_command_writes_summary_per_level_and_method() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "r.json",
        r#"{"visible": 3, "hidden": 2, "levels": [0.0, 0.5], "trials": 3, "n_chains": 60, "burn_in": 40,
            "n_train": 20, "n_test": 40, "bootstrap": 50, "methods": ["ksd", "maxsksd-g"]}"#,
    );
    let out = tmp.path().join("r");
    run_ok(&["gof-rbm", "--config", &cfg, "--seed", "2", "--out", out.to_str().unwrap()]);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().next(), Some("method,level,rejection_rate,mean_statistic,sd_statistic"));
    assert_eq!(summary.lines().count(), 5);
    assert_eq!(fs::read_to_string(out.join("trials.csv")).unwrap().lines().count(), 13);
}
