use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn seal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seal"))
        .args(args)
        .env_remove("SEAL_SEED")
        .output()
        .expect("failed to launch seal")
}

fn short_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    fs::write(&path, r#"{"hyperparams": {"total_timesteps": 2000}}"#).unwrap();
    path.to_str().unwrap().to_string()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn default_spec_validates() {
    let dir = tempfile::tempdir().unwrap();
    let spec = path(dir.path(), "spec.json");
    assert!(seal(&["spec", "new-default", "--out", &spec]).status.success());

    let out = seal(&["spec", "validate", &spec]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.matches(": ok").count(), 5, "{text}");
}

#[test]
fn invalid_spec_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let spec = path(dir.path(), "spec.json");
    assert!(seal(&["spec", "new-default", "--out", &spec]).status.success());
    let mut json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&spec).unwrap()).unwrap();
    json["episode_cap"] = 400.into();
    fs::write(&spec, json.to_string()).unwrap();

    let out = seal(&["spec", "validate", &spec]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stdout).unwrap().contains("FAILED"));
}

#[test]
fn malformed_arguments_exit_with_one() {
    assert_eq!(seal(&["train"]).status.code(), Some(1));
    assert_eq!(seal(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(seal(&["--seed", "minus-one", "spec", "new-default", "--out", "x"]).status.code(), Some(1));
    assert_eq!(
        seal(&["train", "--out", "m", "--no-watermark", "--spec", "s.json"]).status.code(),
        Some(1)
    );
    assert_eq!(seal(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_model_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = seal(&["verify", "--model", &path(dir.path(), "absent.seal")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn train_then_verify_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let config = short_config(dir.path());
    let model = path(dir.path(), "model.seal");
    let log = path(dir.path(), "log.csv");
    let out = seal(&["--seed", "3", "train", "--config", &config, "--out", &model, "--log", &log]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let effective: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(effective["seed"], 3);
    assert_eq!(effective["hyperparams"]["total_timesteps"], 2000);
    assert_eq!(effective["hyperparams"]["gamma"], 0.99);

    let csv = fs::read_to_string(&log).unwrap();
    assert!(csv.starts_with("episode,phase,total_reward,length,epsilon,global_step\n"));
    assert!(csv.contains(",watermark,"));

    let report = path(dir.path(), "report.json");
    let out = seal(&["verify", "--model", &model, "--episodes", "10", "--report", &report]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let expected = match json["verdict"].as_str().unwrap() {
        "match" => 0,
        "no-match" => 2,
        "suspect" => 3,
        other => panic!("unknown verdict {other}"),
    };
    assert_eq!(out.status.code(), Some(expected));
    assert_eq!(json["episodes_run"], 10);

    let out = seal(&["eval", "--model", &model, "--env", "cartpole", "--episodes", "5"]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("mean "));
}

#[test]
fn training_is_reproducible_and_reads_seed_from_env() {
    let dir = tempfile::tempdir().unwrap();
    let config = short_config(dir.path());
    let train = |name: &str, env_seed: Option<&str>, flag_seed: Option<&str>| {
        let model = path(dir.path(), &format!("{name}.seal"));
        let log = path(dir.path(), &format!("{name}.csv"));
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_seal"));
        cmd.env_remove("SEAL_SEED");
        if let Some(s) = env_seed {
            cmd.env("SEAL_SEED", s);
        }
        if let Some(s) = flag_seed {
            cmd.args(["--seed", s]);
        }
        let out = cmd
            .args(["train", "--no-watermark", "--config", &config, "--out", &model, "--log", &log])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (fs::read(model).unwrap(), fs::read(log).unwrap())
    };

    let a = train("a", None, Some("9"));
    let b = train("b", Some("9"), None);
    assert_eq!(a, b);
    let c = train("c", Some("9"), Some("10"));
    assert_ne!(a.0, c.0);
}
