use std::path::Path;
use std::process::{Command, Output};

use tfw::cli::{run, weave_table, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};
use tfw::data::{gen_synthetic, SyntheticSpec};

fn tfw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfw"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

#[test]
fn weave_inspect_prints_the_worked_example() {
    let out = tfw(&["weave-inspect", "--n", "4", "--d", "8", "--k", "4"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[1], "W_1: (f1,0) (f1,1) (f2,0) (f2,1) (f3,0) (f3,1) (f4,0) (f4,1)");
    assert_eq!(lines[4], "W_4: (f1,6) (f1,7) (f2,6) (f2,7) (f3,6) (f3,7) (f4,6) (f4,7)");
}

#[test]
fn weave_table_with_one_chunk_lists_frames_in_order() {
    let t = weave_table(2, 3, 1).unwrap();
    assert!(t.ends_with("W_1: (f1,0) (f1,1) (f1,2) (f2,0) (f2,1) (f2,2)\n"), "{t}");
}

#[test]
fn exit_codes() {
    assert_eq!(run(["tfw", "weave-inspect", "--n", "2", "--d", "4", "--k", "2"]), EXIT_OK);
    assert_eq!(run(["tfw", "--help"]), EXIT_OK);
    assert_eq!(run(["tfw", "no-such-command"]), EXIT_USAGE);
    assert_eq!(run(["tfw", "weave-inspect", "--n", "2"]), EXIT_USAGE);

    let bad = tfw(&["weave-inspect", "--n", "4", "--d", "8", "--k", "3"]);
    assert_eq!(bad.status.code(), Some(EXIT_USAGE));
    let msg = String::from_utf8(bad.stderr).unwrap();
    assert!(msg.contains("D=8") && msg.contains("K=3"), "{msg}");

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"dataset": "nowhere"}"#).unwrap();
    let out = dir.path().join("out");
    let args = ["tfw", "train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    assert_eq!(run(args), EXIT_RUNTIME);

    std::fs::write(&cfg, r#"{"dataset": ".", "unexpected": 1}"#).unwrap();
    assert_eq!(run(args), EXIT_USAGE);
}

fn write_config(dir: &Path, seed: u64) -> std::path::PathBuf {
    let spec = SyntheticSpec {
        n_classes: 2,
        n_patients: 2,
        clips_per_patient: 1,
        frames_per_clip: 8,
        image_size: 8,
        ambiguous_pairs: vec![],
        ..SyntheticSpec::default()
    };
    gen_synthetic(&spec, &dir.join("data")).unwrap();
    let cfg = serde_json::json!({
        "dataset": "data",
        "labels": spec.label_set().unwrap().names(),
        "seed": seed,
        "folds": 2,
        "classifier": {
            "model": {
                "backbone": {"input_size": 8, "stem_channels": 2, "stages": [{"channels": 2, "blocks": 1, "downsample": true}], "feature_dim": null},
                "head": {"kind": "image", "n_classes": 2},
                "n_frames": 1
            },
            "optimizer": "adam", "max_lr": 0.01, "momentum": 0.75, "l2": 0.0,
            "batch_size": 2, "epochs": 1, "train_backbone": true
        }
    });
    let path = dir.join("run.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn meta_hash(dir: &Path) -> String {
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("run_meta.json")).unwrap()).unwrap();
    meta["config_sha256"].as_str().unwrap().to_string()
}

#[test]
fn train_eval_and_run_meta() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 1);
    let cfg = cfg.to_str().unwrap();
    let out = |name: &str| dir.path().join(name).to_str().unwrap().to_string();

    assert!(tfw(&["train", "--config", cfg, "--out", &out("a")]).status.success());
    assert!(tfw(&["train", "--config", cfg, "--out", &out("b")]).status.success());
    assert!(tfw(&["train", "--config", cfg, "--out", &out("c"), "--seed", "2"]).status.success());
    for f in ["params.bin", "history.csv", "model.json", "run_meta.json"] {
        assert!(dir.path().join("a").join(f).exists(), "{f}");
    }
    assert_eq!(meta_hash(&dir.path().join("a")), meta_hash(&dir.path().join("b")));
    assert_ne!(meta_hash(&dir.path().join("a")), meta_hash(&dir.path().join("c")));
    assert_eq!(
        std::fs::read(dir.path().join("a/params.bin")).unwrap(),
        std::fs::read(dir.path().join("b/params.bin")).unwrap()
    );

    let params = out("a/params.bin");
    let ev = tfw(&["eval", "--config", cfg, "--params", &params, "--out", &out("e")]);
    assert!(ev.status.success(), "{}", String::from_utf8_lossy(&ev.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("e/report.json")).unwrap()).unwrap();
    assert_eq!(report["accuracy"], report["recall"]);
}
