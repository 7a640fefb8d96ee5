use descent_rl::Agent;
use descent_sim::env::Segment;
use std::path::Path;
use std::process::{Command, Output};

fn descent(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_descent"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn checkpoints(dir: &Path) {
    Agent::new(Segment::Guidance, 1, 1e-6).save(&dir.join("g.json")).unwrap();
    Agent::new(Segment::Landing, 2, 1e-6).save(&dir.join("l.json")).unwrap();
}

#[test]
fn evaluate_twice_gives_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    checkpoints(dir.path());
    for out in ["a", "b"] {
        let o = descent(
            dir.path(),
            &["evaluate", "--checkpoint", "g.json", "--landing-checkpoint", "l.json", "--scenario", "Optim", "--episodes", "20", "--seed", "7", "--out", out],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["report.csv", "report.json", "terminal_Optim.csv", "miss_Optim.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(a, std::fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    assert!(dir.path().join("a/manifest.json").exists());
}

#[test]
fn simulate_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let o = descent(dir.path(), &["simulate", "--seed", "3", "--out", "traj.csv"]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("traj.csv")).unwrap();
    assert!(text.starts_with("t,r_x,r_y,r_z"));
    assert!(text.lines().count() > 2);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("traj.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    let o = descent(dir.path(), &["replay", "--trajectory", "traj.csv", "--seed", "3", "--out", "again.csv"]);
    assert!(o.status.success());
    assert_eq!(text, std::fs::read_to_string(dir.path().join("again.csv")).unwrap());
}

#[test]
fn missing_checkpoint_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let o = descent(dir.path(), &["evaluate", "--checkpoint", "nope.json", "--landing-checkpoint", "nope.json", "--out", "ev"]);
    assert!(!o.status.success());
    assert!(!dir.path().join("ev").exists());
    let o = descent(dir.path(), &["build-ic-pool", "--checkpoint", "nope.json", "--out", "pool.json"]);
    assert!(!o.status.success());
    assert!(!dir.path().join("pool.json").exists());
    let o = descent(dir.path(), &["simulate", "--checkpoint", "nope.json", "--landing-checkpoint", "x.json", "--out", "t.csv"]);
    assert!(!o.status.success());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn unknown_flags_and_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!descent(dir.path(), &["simulate", "--bogus", "--out", "t.csv"]).status.success());
    assert!(!descent(dir.path(), &["simulate", "--scenario", "XY=3", "--out", "t.csv"]).status.success());
    std::fs::write(dir.path().join("bad.toml"), "[episode]\nnot_a_key = 1\n").unwrap();
    let o = descent(dir.path(), &["--config", "bad.toml", "simulate", "--out", "t.csv"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("not_a_key"));
    assert!(!dir.path().join("t.csv").exists());
}

#[test]
fn training_resumes_from_saved_state() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "[guidance]\nbatch_episodes = 6\nminibatch_episodes = 3\nwarmup_episodes = 6\n",
    )
    .unwrap();
    let run = |out: &str, episodes: &str, resume: Option<&str>| {
        let mut args = vec!["--config", "run.toml", "train-guidance", "--seed", "4", "--episodes", episodes, "--out", out];
        if let Some(r) = resume {
            args.extend(["--resume", r]);
        }
        let o = descent(dir.path(), &args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run("full", "18", None);
    run("split", "6", None);
    run("split", "18", Some("split/trainer_state.json"));
    let full = std::fs::read_to_string(dir.path().join("full/learning_curve.csv")).unwrap();
    let split = std::fs::read_to_string(dir.path().join("split/learning_curve.csv")).unwrap();
    assert_eq!(full.lines().count(), 4);
    assert_eq!(full, split);
    assert_eq!(
        std::fs::read(dir.path().join("full/guidance.json")).unwrap(),
        std::fs::read(dir.path().join("split/guidance.json")).unwrap()
    );
}
