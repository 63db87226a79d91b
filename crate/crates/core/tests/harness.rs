use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use asym_distill::harness::{compare_runs, run_experiment, ExperimentConfig, Method, RunManifest, SummaryRow};
use asym_distill::EnvConfig;

fn distill(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_distill")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"schema_version = 1
method = "critiq"
seeds = [1, 2]
eval_episodes = 20

[env]
kind = "line_search"
num_goals = 3

[critiq]
iterations = 3
episodes_per_iter = 5
num_demos = 50
validation_episodes = 20

[dagger]
iterations = 3
episodes_per_iter = 5
num_demos = 50
validation_episodes = 20
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("cfg.toml");
    fs::write(&p, text).unwrap();
    p
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "timing.json" {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn read_rows(dir: &Path) -> Vec<SummaryRow> {
    csv::Reader::from_path(dir.join("summary.csv"))
        .unwrap()
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap()
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    let args = ["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    let first = distill(&args);
    assert!(first.status.success(), "{}", stderr(&first));
    let a = snapshot(&out);
    assert!(a.iter().any(|(p, _)| p.ends_with("seed-2/iterations.jsonl")));
    assert!(a.iter().any(|(p, _)| p == Path::new("summary.csv")));
    fs::remove_dir_all(&out).unwrap();
    assert!(distill(&args).status.success());
    assert_eq!(a, snapshot(&out));

    let lines = fs::read_to_string(out.join("seed-1/iterations.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 4);
    for l in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert_eq!(v["schema"], "asym-distill/iteration");
        assert_eq!(v["method"], "critiq");
    }
}

#[test]
fn oracle_method_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("oracle");
    let o = distill(&["run", "--method", "oracle", "--env", "line_search:3", "--seed", "1..3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_rows(&out);
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert_eq!(r.success_rate, 1.0);
        assert!(r.regret.unwrap().abs() < 1e-9);
    }
    let printed = distill(&["oracle", "--env", "room_graph:4"]);
    let v: serde_json::Value = serde_json::from_slice(&printed.stdout).unwrap();
    assert_eq!(v["exact_success"], 1.0);
}

#[test]
fn compare_two_methods() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let c = tmp.path().join("critiq");
    let d = tmp.path().join("dagger");
    for (m, o) in [("critiq", &c), ("dagger", &d)] {
        let r = distill(&["run", "--config", cfg.to_str().unwrap(), "--method", m, "--out", o.to_str().unwrap()]);
        assert!(r.status.success(), "{}", stderr(&r));
    }
    let cmp = tmp.path().join("cmp");
    let r = distill(&["compare", c.to_str().unwrap(), d.to_str().unwrap(), "--out", cmp.to_str().unwrap()]);
    assert!(r.status.success(), "{}", stderr(&r));
    let table = fs::read_to_string(cmp.join("comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.contains("critiq") && table.contains("dagger"));
    assert!(cmp.join("exploration_series.csv").exists());
    assert!(cmp.join("curves.csv").exists());
}

#[test]
fn compare_reports_what_it_found() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    fs::write(empty.join("notes.txt"), "x").unwrap();
    let missing = tmp.path().join("missing");
    let r = distill(&["compare", empty.to_str().unwrap(), missing.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    let msg = stderr(&r);
    assert!(msg.contains("notes.txt"), "{msg}");
    assert!(msg.contains("does not exist"), "{msg}");
}

#[test]
fn compare_refuses_mismatched_environments() {
    let tmp = tempfile::tempdir().unwrap();
    let mut a = ExperimentConfig::new(Method::Oracle, EnvConfig::line_search(3));
    a.seeds = vec![1, 2];
    a.out = tmp.path().join("a");
    let mut b = a.clone();
    b.env = EnvConfig::line_search(2);
    b.out = tmp.path().join("b");
    run_experiment(&a).unwrap();
    run_experiment(&b).unwrap();
    let err = compare_runs(&[a.out.clone(), b.out.clone()]).unwrap_err();
    assert!(err.to_string().contains("not comparable"), "{err}");

    let r = distill(&["compare", a.out.to_str().unwrap(), b.out.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(stderr(&r).contains("line_search"));
}

#[test]
fn bad_config_points_at_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL.replace("eval_episodes = 20", "eval_episodes = 20\nepisods = 4"));
    let r = distill(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    let msg = stderr(&r);
    assert!(msg.contains("cfg.toml:5:1"), "{msg}");
    assert!(msg.contains("episods"), "{msg}");
    assert!(!tmp.path().join("o").exists());

    let cfg = write_config(tmp.path(), &SMALL.replace("seeds = [1, 2]", "seeds = []"));
    let r = distill(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(stderr(&r).contains("cfg.toml:3: seeds"), "{}", stderr(&r));
}

#[test]
fn runtime_failure_leaves_a_marker() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    fs::create_dir(&out).unwrap();
    // a file where the seed directory should go
    fs::write(out.join("seed-1"), "in the way").unwrap();
    let r = distill(&["run", "--method", "oracle", "--env", "line_search:2", "--seed", "1,2", "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1), "{}", stderr(&r));
    let marker = fs::read_to_string(out.join("FAILED")).unwrap();
    assert!(marker.contains("seed 1"));
    assert!(!marker.contains("seed 2"));
    assert_eq!(read_rows(&out).len(), 1);
}

#[test]
fn flags_override_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL.replace("\"critiq\"", "\"oracle\""));
    let out = tmp.path().join("o");
    let r = distill(&["run", "--config", cfg.to_str().unwrap(), "--seed", "7", "--episodes", "11", "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", stderr(&r));
    let m: RunManifest = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(m.seeds, vec![7]);
    assert_eq!(m.eval_episodes, 11);
    // untouched by flags, so the file wins over the default
    assert_eq!(m.env, EnvConfig::line_search(3));
    assert_eq!(m.method, Method::Oracle);
    let saved = ExperimentConfig::load(&out.join("config.toml")).unwrap();
    assert_eq!(saved.critiq.iterations, 3);
    assert_eq!(saved.retry, Default::default());
}

#[test]
fn eval_scores_a_saved_policy() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    assert!(distill(&["run", "--method", "oracle", "--env", "line_search:3", "--seed", "1", "--out", out.to_str().unwrap()])
        .status
        .success());
    let report = tmp.path().join("eval.json");
    let policy = out.join("seed-1/policy.json");
    let r = distill(&["eval", "--policy", policy.to_str().unwrap(), "--env", "line_search:3", "--episodes", "40", "--out", report.to_str().unwrap()]);
    assert!(r.status.success(), "{}", stderr(&r));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(v["success_rate"], 1.0);
    assert_eq!(v["episodes"], 40);
}
