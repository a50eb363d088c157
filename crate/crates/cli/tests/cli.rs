use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fogguard_cli::RunManifest;

const TINY: &str = r#"
version = 1
name = "tiny"
seeds = [0]
output_dir = "out"

[model]
preset = "camera"
input_dim = 12

[dataset]
kind = "synth"
instances = 300
view_dim = 12

[training]
learning_rate = 0.01
batch_size = 32
epochs = 3
loss = "weighted_cross_entropy"

[reliability]
tiers = ["no_failure", "hazardous"]

[runtime.timeouts]
round_ms = 60
heartbeat_ms = 15
suspicion_ms = 90
"#;

fn setup(text: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.toml");
    fs::write(&path, text).unwrap();
    (dir, path)
}

fn fogguard(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fogguard")).args(args).arg("--config").arg(config).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(o),
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn train_evaluate_resiliency_report() {
    let (dir, config) = setup(TINY);
    let out = dir.path().join("out");

    assert_ok(&fogguard(&["train"], &config));
    let manifest = RunManifest::read(&out).unwrap();
    assert_eq!(manifest.seeds, vec![0]);
    let dfg = manifest.entry("deepfogguard", 0).unwrap();
    assert_eq!(dfg.skip_hyperconnections, 7);
    assert_eq!(manifest.entry("vanilla", 0).unwrap().skip_hyperconnections, 0);
    assert!(out.join(&dfg.weights).is_file());
    let history = fs::read_to_string(out.join(&dfg.history)).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_accuracy,selected,seed,config_hash"));
    assert_eq!(history.lines().filter(|l| l.contains(",true,")).count(), 1);

    let o = fogguard(&["evaluate", "--variant", "vanilla", "--seed", "0", "--failed", "f1"], &config);
    assert_ok(&o);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    // The sole path to the cloud runs through f1, so every answer is a guess.
    assert!((v["accuracy"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-9);

    assert_ok(&fogguard(&["resiliency"], &config));
    let manifest = RunManifest::read(&out).unwrap();
    for variant in ["vanilla", "deepfogguard"] {
        let reports = &manifest.entry(variant, 0).unwrap().reports;
        assert_eq!(reports.keys().collect::<Vec<_>>(), ["hazardous", "no_failure"]);
        for r in reports.values() {
            assert!(out.join(&r.path).is_file());
            assert_eq!(r.method, "exact");
        }
    }
    let aggregate = fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert!(aggregate.starts_with("variant,setting,runs,mean,std_dev,min,max,seeds,config_hash"));
    assert_eq!(aggregate.lines().count(), 5);

    fs::remove_file(out.join("aggregate.csv")).unwrap();
    let o = fogguard(&["report"], &config);
    assert_ok(&o);
    assert_eq!(fs::read_to_string(out.join("aggregate.csv")).unwrap(), aggregate);
    assert!(stdout(&o).contains("gap hazardous"));

    // A manifest written under another config is not silently mixed into.
    fs::write(&config, TINY.replace("epochs = 3", "epochs = 2")).unwrap();
    assert_eq!(fogguard(&["train"], &config).status.code(), Some(2));
}

#[test]
fn chaos_matches_the_simulator() {
    let (dir, config) = setup(TINY);
    assert_ok(&fogguard(&["train", "--variant", "deepfogguard"], &config));
    let o = fogguard(
        &["chaos", "--variant", "deepfogguard", "--seed", "0", "--instances", "20", "--kill", "f3@5"],
        &config,
    );
    assert_ok(&o);
    assert!(stdout(&o).contains("verdict: pass"));
    let chaos = dir.path().join("out/deepfogguard/seed-0/chaos");
    let verdict: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(chaos.join("verdict.json")).unwrap()).unwrap();
    assert_eq!(verdict["pass"], true);
    assert_eq!(verdict["null_mismatches"], 0);
    assert!(chaos.join("transcript.json").is_file());
    assert!(chaos.join("outcomes.csv").is_file());
}

#[test]
fn failures_map_to_exit_codes() {
    let (dir, config) = setup(TINY);

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, TINY.replace("version = 1", "version = 1\nunknown_key = 3")).unwrap();
    assert_eq!(fogguard(&["train"], &bad).status.code(), Some(2));

    let missing = dir.path().join("missing.toml");
    fs::write(
        &missing,
        TINY.replace("kind = \"synth\"", "kind = \"container\"\npath = \"nowhere.dfgd\"")
            .replace("instances = 300\nview_dim = 12\n", ""),
    )
    .unwrap();
    assert_eq!(fogguard(&["train"], &missing).status.code(), Some(3));

    assert_ok(&fogguard(&["train", "--variant", "vanilla"], &config));
    assert_eq!(fogguard(&["resiliency", "--tier", "stormy"], &config).status.code(), Some(2));
    assert_eq!(
        fogguard(&["evaluate", "--variant", "vanilla", "--seed", "0", "--failed", "cloud"], &config).status.code(),
        Some(2)
    );
    assert_eq!(fogguard(&["evaluate", "--variant", "vanilla", "--seed", "9"], &config).status.code(), Some(2));
    let o = fogguard(&["chaos", "--variant", "vanilla", "--seed", "0", "--kill", "cloud@1"], &config);
    assert_eq!(o.status.code(), Some(2));
}
