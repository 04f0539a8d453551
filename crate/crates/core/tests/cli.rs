use std::path::Path;
use std::process::{Command, Output};

fn subplan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subplan")).current_dir(dir).args(args).env_remove("SUBPLAN_SEED").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_lists_every_command() {
    let dir = tempfile::tempdir().unwrap();
    let out = subplan(dir.path(), &["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["collect", "pretrain", "train", "eval", "plot"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    let out = subplan(dir.path(), &["train", "--help"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("--no-pretrain"));
}

#[test]
fn train_without_pretrain_checkpoint_is_actionable() {
    let dir = tempfile::tempdir().unwrap();
    let out = subplan(dir.path(), &["train"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("subplan pretrain"), "{}", stderr(&out));
}

#[test]
fn pretrain_without_data_names_collect() {
    let dir = tempfile::tempdir().unwrap();
    let out = subplan(dir.path(), &["pretrain"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("subplan collect"), "{}", stderr(&out));
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = subplan(dir.path(), &["collect", "--set", "ppo.nonsense=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nonsense"));
    std::fs::write(dir.path().join("bad.cfg"), "[ppo]\nclip = 2.0\n").unwrap();
    assert_eq!(subplan(dir.path(), &["collect", "-c", "bad.cfg"]).status.code(), Some(2));
    assert_eq!(subplan(dir.path(), &["collect", "-c", "missing.cfg"]).status.code(), Some(2));
    assert_eq!(subplan(dir.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn seed_env_var_overrides_config_and_flag_overrides_env() {
    let dir = tempfile::tempdir().unwrap();
    let run = |env: Option<&str>, extra: &[&str], out: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_subplan"));
        cmd.current_dir(dir.path()).args(["collect", "--subtask", "Goto", "--episodes", "3", "--out", out]).args(extra);
        match env {
            Some(s) => cmd.env("SUBPLAN_SEED", s),
            None => cmd.env_remove("SUBPLAN_SEED"),
        };
        assert!(cmd.output().unwrap().status.success());
        std::fs::read(dir.path().join(out)).unwrap()
    };
    let base = run(None, &["--seed", "5"], "a.jsonl");
    assert_eq!(run(Some("5"), &[], "b.jsonl"), base);
    assert_ne!(run(Some("6"), &[], "c.jsonl"), base);
    assert_eq!(run(Some("6"), &["--seed", "5"], "d.jsonl"), base);
}

#[test]
fn plot_rejects_malformed_metrics() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.csv"), "step,reward\n1,2\n").unwrap();
    let out = subplan(dir.path(), &["plot", "--input", "m.csv"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(subplan(dir.path(), &["plot", "--input", "absent.csv"]).status.code(), Some(3));
}
