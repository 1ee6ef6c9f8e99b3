use std::path::Path;
use std::process::{Command, Output};

fn treepolicy(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treepolicy"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .env_remove("TREEPOLICY_SEED")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn default_chain_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    for cmd in [&["gen-data"][..], &["estimate"], &["solve"], &["--replications", "5", "simulate"], &["report"]] {
        let o = treepolicy(out, cmd);
        assert!(o.status.success(), "{cmd:?}: {}", stderr(&o));
    }
    for f in [
        "config.resolved.toml",
        "cohort.jsonl",
        "cohort_summary.json",
        "mdp.json",
        "encoder.json",
        "tree_policy.json",
        "tree_policy.txt",
        "simulate.csv",
        "excluded_survival.csv",
        "report.txt",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let sim = std::fs::read_to_string(out.join("simulate.csv")).unwrap();
    let rows: Vec<&str> = sim.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().any(|r| r.starts_with("tree-sofa,180,0.99,")));
}

#[test]
fn sweep_has_a_row_per_guideline_and_capacity() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    for cmd in [&["gen-data"][..], &["estimate"], &["solve"], &["--replications", "2", "sweep"]] {
        let o = treepolicy(out, cmd);
        assert!(o.status.success(), "{cmd:?}: {}", stderr(&o));
    }
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let data: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(
        data[0],
        "guideline,capacity,p,mean_deaths,ci_lo,ci_hi,excluded_triage,excluded_reassess,excluded_preempt,excl_survival_rate"
    );
    assert_eq!(data.len() - 1, 36);
}

#[test]
fn dependency_and_config_errors_have_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    let o = treepolicy(out, &["solve"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("estimate"), "{}", stderr(&o));

    let o = treepolicy(out, &["--capacity", "abc", "simulate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("simulation.capacity"), "{}", stderr(&o));

    let cfg = out.join("bad.toml");
    std::fs::write(&cfg, "[costs]\nC = 100\nbeta = 2\n").unwrap();
    let o = treepolicy(out, &["--config", cfg.to_str().unwrap(), "report"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("beta"), "{}", stderr(&o));
}

#[test]
fn flags_beat_the_file_and_env_sets_the_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    let cfg = out.join("run.toml");
    std::fs::write(&cfg, "seed = 1\n[simulation]\np = 0.99\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_treepolicy"))
        .args(["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--p", "0.5", "report"])
        .env("TREEPOLICY_SEED", "77")
        .output()
        .unwrap();
    // Nothing to report yet, but the resolved config is written first.
    assert_eq!(o.status.code(), Some(3));
    let resolved = std::fs::read_to_string(out.join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("seed = 77"), "{resolved}");
    assert!(resolved.contains("p = 0.5"), "{resolved}");
}
