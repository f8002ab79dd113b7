//! Exit codes, config errors and output layout of the `sfdsfi` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"
[data]
samples = 10000

[model]
hidden = 4

[train]
epochs = 1
"#;

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("small.toml"), config).unwrap();
        Self { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn run_env(&self, args: &[&str], env: &[(&str, &str)]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_sfdsfi"));
        cmd.args(args).current_dir(self.path()).env_remove("SFDSFI_SEED").env("RUST_LOG", "error");
        for (k, v) in env {
            cmd.env(k, v);
        }
        cmd.output().unwrap()
    }

    /// Runs with the small config prepended.
    fn run(&self, args: &[&str]) -> Output {
        let full: Vec<&str> = ["--config", "small.toml"].iter().chain(args).copied().collect();
        self.run_env(&full, &[])
    }

    fn read(&self, rel: &str) -> Vec<u8> {
        std::fs::read(self.path().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }

    fn json(&self, rel: &str) -> Value {
        serde_json::from_slice(&self.read(rel)).unwrap()
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn missing_dataset_is_a_usage_error() {
    let sb = Sandbox::new(SMALL);
    let out = sb.run(&["train"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("dataset not found"), "{}", stderr(&out));
}

#[test]
fn unknown_subcommand_and_bad_flag_exit_one() {
    let sb = Sandbox::new(SMALL);
    assert_eq!(code(&sb.run_env(&["frobnicate"], &[])), 1);
    assert_eq!(code(&sb.run_env(&["--algo", "exhaustive", "detect"], &[])), 1);
    assert_eq!(code(&sb.run_env(&["--help"], &[])), 0);
}

#[test]
fn bad_split_fraction_names_the_field() {
    let sb = Sandbox::new("[split]\ntrain_fraction = 1.5\nvalidation_fraction = 0.1\ntest_fraction = 0.2\n");
    let out = sb.run(&["synth"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("train_fraction"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_is_rejected() {
    let sb = Sandbox::new("[train]\nepochz = 3\n");
    let out = sb.run(&["synth"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("epochz"), "{}", stderr(&out));
}

#[test]
fn empty_beta_grid_is_a_config_error() {
    let sb = Sandbox::new("[sweep]\nbeta_grid = []\n");
    let out = sb.run(&["synth"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("beta_grid"), "{}", stderr(&out));
}

#[test]
fn sensor_count_mismatch_is_reported() {
    let sb = Sandbox::new(SMALL);
    assert_eq!(code(&sb.run(&["synth"])), 0);
    let four = format!("{SMALL}\n[sweep]\nchannels = [0, 1, 2, 3]\n").replace("[data]", "[data]\nsensors = 4");
    std::fs::write(sb.path().join("four.toml"), four).unwrap();
    let out = sb.run_env(&["--config", "four.toml", "train"], &[]);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("8 sensors") && err.contains("expects 4"), "{err}");
}

#[test]
fn divergent_training_is_a_numeric_failure() {
    let sb = Sandbox::new(&SMALL.replace("epochs = 1", "epochs = 1\nlr = 1e200"));
    assert_eq!(code(&sb.run(&["synth"])), 0);
    let out = sb.run(&["train"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("diverged"));
}

#[test]
fn two_stage_training_writes_exactly_two_checkpoints() {
    let sb = Sandbox::new(SMALL);
    assert_eq!(code(&sb.run(&["synth"])), 0);
    assert_eq!(code(&sb.run(&["--two-stage", "train"])), 0);
    let mut checkpoints: Vec<String> = std::fs::read_dir(sb.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".json") && n != "loss_history.json")
        .collect();
    checkpoints.sort();
    assert_eq!(checkpoints, ["detector.json", "isolator.json"]);
    assert_eq!(sb.json("out/detector.json")["train_config"]["lambda"], 0.0);
    assert_eq!(sb.json("out/isolator.json")["train_config"]["lambda"], 0.01);
}

#[test]
fn lambda_flag_reaches_checkpoint_metadata() {
    let sb = Sandbox::new(SMALL);
    assert_eq!(code(&sb.run(&["synth"])), 0);
    assert_eq!(code(&sb.run(&["--lambda", "0", "train"])), 0);
    let ckpt = sb.json("out/model.json");
    assert_eq!(ckpt["train_config"]["lambda"], 0.0);
    let history = sb.json("out/loss_history.json");
    assert_eq!(history[0]["lambda"], 0.0);
}

#[test]
fn detect_exit_code_follows_the_verdict() {
    // A very small alpha keeps clean data free of declarations.
    let sb = Sandbox::new(&format!("{SMALL}\n[fusion]\nalpha = 1e-9\n"));
    assert_eq!(code(&sb.run(&["synth"])), 0);
    assert_eq!(code(&sb.run(&["train"])), 0);
    assert_eq!(code(&sb.run(&["detect"])), 0);
    let out = sb.run(&["detect", "--inject", "2:0.5"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let lines = String::from_utf8(sb.read("out/verdicts.jsonl")).unwrap();
    assert!(lines.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));
}

#[test]
fn isolate_refuses_without_a_declared_fault_unless_forced() {
    let sb = Sandbox::new(&format!("{SMALL}\n[fusion]\nalpha = 1e-9\n"));
    assert_eq!(code(&sb.run(&["synth"])), 0);
    assert_eq!(code(&sb.run(&["train"])), 0);
    let out = sb.run(&["isolate"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--force"), "{}", stderr(&out));
    assert_eq!(code(&sb.run(&["--force", "isolate"])), 0);
    let report = sb.json("out/fault_report.json");
    assert_eq!(report["forced"], true);

    assert_eq!(code(&sb.run(&["isolate", "--inject", "5:0.5"])), 0);
    let report = sb.json("out/fault_report.json");
    assert_eq!(report["forced"], false);
    assert_eq!(report["fault_list"][0], 5);
}

#[test]
fn injection_spec_is_validated() {
    let sb = Sandbox::new(SMALL);
    assert_eq!(code(&sb.run(&["synth"])), 0);
    assert_eq!(code(&sb.run(&["train"])), 0);
    for bad in ["9:0.1", "x:0.1", "3"] {
        let out = sb.run(&["detect", "--inject", bad]);
        assert_eq!(code(&out), 1, "{bad}: {}", stderr(&out));
    }
}

#[test]
fn seed_env_var_matches_seed_flag() {
    let sb = Sandbox::new(SMALL);
    let flag = sb.run(&["--seed", "123", "--out", "a", "synth"]);
    assert_eq!(code(&flag), 0);
    let env = sb.run_env(&["--config", "small.toml", "--out", "b", "synth"], &[("SFDSFI_SEED", "123")]);
    assert_eq!(code(&env), 0);
    assert_eq!(code(&sb.run(&["--out", "c", "synth"])), 0);
    assert_eq!(sb.read("a/data.csv"), sb.read("b/data.csv"));
    assert_ne!(sb.read("a/data.csv"), sb.read("c/data.csv"));
}

#[test]
fn synth_is_byte_identical_for_the_same_seed() {
    let sb = Sandbox::new(SMALL);
    assert_eq!(code(&sb.run(&["--out", "a", "synth"])), 0);
    assert_eq!(code(&sb.run(&["--out", "b", "synth"])), 0);
    assert_eq!(sb.read("a/data.csv"), sb.read("b/data.csv"));
}

#[test]
fn init_refuses_to_overwrite_without_force() {
    let sb = Sandbox::new(SMALL);
    assert_eq!(code(&sb.run_env(&["init"], &[])), 0);
    let written = sb.read("sfdsfi.toml");
    let out = sb.run_env(&["init"], &[]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--force"));
    assert_eq!(code(&sb.run_env(&["--force", "--seed", "3", "init"], &[])), 0);
    assert_ne!(sb.read("sfdsfi.toml"), written);
    // The template round-trips as a valid config.
    assert_eq!(code(&sb.run_env(&["--config", "sfdsfi.toml", "--out", "o", "synth"], &[])), 0);
}
