use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_selfdual"));
    c.env_remove("OUT_DIR");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_cfg(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn golden_configs_certify() {
    let out = tempfile::tempdir().unwrap();
    for name in ["heat_1d", "transport_1d", "coupled_1d", "nse2d", "nse2d_evolution"] {
        let cfg = configs().join(format!("{name}.cfg"));
        let o = run(&["run", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{name}: {}", stderr(&o));
        let text = fs::read_to_string(out.path().join(format!("{name}.summary.json"))).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["status"], "converged", "{name}");
        assert!(v["certificate"].as_f64().unwrap() <= 1e-6 * v["scale"].as_f64().unwrap());
        for ext in ["solution.csv", "history.csv", "timing.json"] {
            assert!(out.path().join(format!("{name}.{ext}")).exists(), "{name}.{ext}");
        }
    }
}

#[test]
fn max_iter_exits_one_with_partial_history() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "a.cfg",
        "problem.name = nse2d\nproblem.n = 16\nsolver.max_iter = 2\n",
    );
    let o = run(&["run", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let history = fs::read_to_string(dir.path().join("nse2d.history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
    let summary = fs::read_to_string(dir.path().join("nse2d.summary.json")).unwrap();
    assert!(summary.contains("\"status\": \"max_iter\""));
}

#[test]
fn malformed_config_exits_two_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "a.cfg", "problem.name = heat_1d\n\nproblem.steps = many\n");
    let o = run(&["run", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3: `problem.steps`"), "{}", stderr(&o));

    let cfg = write_cfg(dir.path(), "b.cfg", "problem.name = heat_1d\nsolver.damping = 0.5\n");
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 2: `solver.damping`"), "{}", stderr(&o));
}

#[test]
fn structural_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "a.cfg", "problem.name = coupled_1d\nproblem.c = 2\n");
    let o = run(&["run", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("skew"), "{}", stderr(&o));

    let cfg = write_cfg(
        dir.path(),
        "b.cfg",
        "problem.name = transport_1d\nproblem.a0 = const:1\n",
    );
    let o = run(&["run", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("convexity"), "{}", stderr(&o));
}

#[test]
fn summaries_are_bit_identical_across_runs() {
    let cfg = configs().join("nse2d.cfg");
    let texts: Vec<String> = (0..2)
        .map(|_| {
            let out = tempfile::tempdir().unwrap();
            let o = run(&[
                "run",
                cfg.to_str().unwrap(),
                "--out",
                out.path().to_str().unwrap(),
                "--seed",
                "7",
            ]);
            assert_eq!(code(&o), 0, "{}", stderr(&o));
            fs::read_to_string(out.path().join("nse2d.summary.json")).unwrap()
        })
        .collect();
    assert_eq!(texts[0], texts[1]);
    assert!(texts[0].contains("\"seed\": 7"));
}

#[test]
fn out_dir_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let from_cfg = dir.path().join("cfg");
    let from_env = dir.path().join("env");
    let from_flag = dir.path().join("flag");
    let cfg = write_cfg(
        dir.path(),
        "a.cfg",
        &format!("problem.name = coupled_1d\noutput.dir = {}\n", from_cfg.display()),
    );
    let summary = |d: &Path| d.join("coupled_1d.summary.json").exists();

    assert_eq!(code(&run(&["run", cfg.to_str().unwrap()])), 0);
    assert!(summary(&from_cfg));

    let o = bin()
        .env("OUT_DIR", &from_env)
        .args(["run", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(summary(&from_env));

    let o = bin()
        .env("OUT_DIR", &from_env)
        .args(["run", cfg.to_str().unwrap(), "--out", from_flag.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(summary(&from_flag));
}

#[test]
fn sweep_writes_table_and_takes_worst_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("coupled_1d.cfg");
    let o = run(&[
        "sweep",
        cfg.to_str().unwrap(),
        "--param",
        "problem.c",
        "--values",
        "1,2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
    let table = fs::read_to_string(dir.path().join("coupled_1d_sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "value,status,certificate,oracle_error,exit");
    assert!(rows[1].starts_with("1,converged,") && rows[1].ends_with(",0"));
    assert_eq!(rows[2], "2,error,null,null,3");
    assert!(dir.path().join("coupled_1d_0.summary.json").exists());
}

#[test]
fn check_suites() {
    let o = run(&["check", "all"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("0 failed"));
    assert_eq!(code(&run(&["check", "nonsense"])), 2);
}
