//! End-to-end runs of the `mixnet` binary: the full subcommand pipeline,
//! reproducibility of its artifacts, and the documented exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn mixnet<S: AsRef<std::ffi::OsStr>>(dir: &Path, args: &[S], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mixnet"));
    cmd.current_dir(dir).args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("failed to launch mixnet")
}

fn assert_ok(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is not JSON")
}

const SMALL: &[&str] = &[
    "--set",
    "synth.dim=8",
    "--set",
    "synth.train_utterances=20",
    "--set",
    "synth.cv_utterances=4",
    "--set",
    "synth.test_utterances=4",
    "--set",
    "synth.frames_per_utterance=60",
    "--set",
    "train.epochs=1",
];

fn small_model(variant: &str) -> Vec<String> {
    let mut args: Vec<String> = SMALL.iter().map(|s| s.to_string()).collect();
    for set in [
        format!("model.variant={variant}"),
        "model.feature_dim=8".into(),
        "model.hidden_width=16".into(),
        "model.aux_hidden_width=8".into(),
    ] {
        args.push("--set".into());
        args.push(set);
    }
    if variant == "mixnet2" || variant == "mixnet3" {
        args.push("--set".into());
        args.push("model.expert_structure={\"low_rank\":{\"out_dim\":8}}".into());
    }
    if variant == "mixnet4" {
        args.push("--set".into());
        args.push("model.expert_structure={\"banded\":{\"band\":3}}".into());
    }
    args
}

#[test]
fn full_pipeline_and_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let args = small_model("mixnet2");
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();

    let with = |extra: &[&str]| -> Vec<String> {
        let mut v: Vec<String> = argv.iter().map(|s| s.to_string()).collect();
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };

    // synth twice: byte-identical datasets
    assert_ok(&mixnet(dir, &with(&["synth", "--out-dir", "a"]), &[]));
    assert_ok(&mixnet(dir, &with(&["synth", "--out-dir", "b"]), &[]));
    for split in ["train", "cv", "test"] {
        let a = std::fs::read(dir.join("a").join(format!("{split}.frames"))).unwrap();
        let b = std::fs::read(dir.join("b").join(format!("{split}.frames"))).unwrap();
        assert_eq!(a, b, "{split} differs between identical runs");
    }

    // pretrain-aux + train twice: byte-identical checkpoints
    for tag in ["1", "2"] {
        let aux = format!("aux{tag}.ckpt");
        let model = format!("model{tag}.ckpt");
        assert_ok(&mixnet(
            dir,
            &with(&["pretrain-aux", "--data-dir", "a", "--ckpt", &aux]),
            &[],
        ));
        assert_ok(&mixnet(
            dir,
            &with(&["train", "--data-dir", "a", "--init", &aux, "--ckpt", &model]),
            &[],
        ));
    }
    let m1 = std::fs::read(dir.join("model1.ckpt")).unwrap();
    let m2 = std::fs::read(dir.join("model2.ckpt")).unwrap();
    assert_eq!(m1, m2, "training is not bit-reproducible");

    // eval emits provenance + accuracy
    let eval = assert_ok(&mixnet(
        dir,
        &with(&["eval", "--data-dir", "a", "--ckpt", "model1.ckpt", "--split", "cv"]),
        &[],
    ));
    assert!(eval["report"]["frame_accuracy"].as_f64().unwrap() >= 0.0);
    assert_eq!(eval["provenance"]["tool_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(eval["provenance"]["config_sha256"].as_str().unwrap().len(), 64);

    // analyze writes the scatter CSV with the documented header
    let analyze = assert_ok(&mixnet(
        dir,
        &with(&[
            "analyze",
            "--data-dir",
            "a",
            "--ckpt",
            "model1.ckpt",
            "--tap",
            "1",
            "--csv",
            "scatter.csv",
        ]),
        &[],
    ));
    assert!(analyze["report"]["fisher_broad"].as_f64().unwrap().is_finite());
    let csv = std::fs::read_to_string(dir.join("scatter.csv")).unwrap();
    assert!(csv.starts_with("x,y,broad_label,subclass_label\n"));
    assert_eq!(csv.lines().count(), 1 + 4 * 60);
}

#[test]
fn variants_round_trip_through_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    for variant in ["baseline", "eigen_dmoe", "mixnet4"] {
        let args = small_model(variant);
        let mut argv: Vec<&str> = args.iter().map(String::as_str).collect();
        if variant == "eigen_dmoe" {
            argv.extend_from_slice(&["--set", "model.eigen_dim=8"]);
        }
        let with = |extra: &[&str]| -> Vec<String> {
            let mut v: Vec<String> = argv.iter().map(|s| s.to_string()).collect();
            v.extend(extra.iter().map(|s| s.to_string()));
            v
        };
        assert_ok(&mixnet(dir, &with(&["synth", "--out-dir", "data"]), &[]));
        let ckpt = format!("{variant}.ckpt");
        if variant == "mixnet4" {
            assert_ok(&mixnet(
                dir,
                &with(&["pretrain-aux", "--data-dir", "data", "--ckpt", &ckpt]),
                &[],
            ));
            assert_ok(&mixnet(
                dir,
                &with(&["train", "--data-dir", "data", "--init", &ckpt, "--ckpt", &ckpt]),
                &[],
            ));
        } else {
            assert_ok(&mixnet(
                dir,
                &with(&["train", "--data-dir", "data", "--ckpt", &ckpt]),
                &[],
            ));
        }
        assert_ok(&mixnet(
            dir,
            &with(&["eval", "--data-dir", "data", "--ckpt", &ckpt]),
            &[],
        ));
    }
}

#[test]
fn env_seed_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let args = small_model("baseline");
    let mut a1 = args.clone();
    a1.extend(["synth".into(), "--out-dir".into(), "s1".into()]);
    let mut a2 = args.clone();
    a2.extend(["synth".into(), "--out-dir".into(), "s2".into()]);
    let v1: Vec<&str> = a1.iter().map(String::as_str).collect();
    let v2: Vec<&str> = a2.iter().map(String::as_str).collect();
    let out1 = assert_ok(&mixnet(dir, &v1, &[("MIXNET_SEED", "7")]));
    let out2 = assert_ok(&mixnet(dir, &v2, &[]));
    assert_eq!(out1["provenance"]["seed"], 7);
    assert_eq!(out2["provenance"]["seed"], 42);
    let d1 = std::fs::read(dir.join("s1/train.frames")).unwrap();
    let d2 = std::fs::read(dir.join("s2/train.frames")).unwrap();
    assert_ne!(d1, d2);
}

#[test]
fn documented_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    // config/validation error -> 2
    let out = mixnet(dir, &["--set", "synth.overlap=2.0", "synth", "--out-dir", "x"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["exit_code"], 2);

    // unknown config key -> json error -> 3
    let out = mixnet(dir, &["--set", "synth.overlip=0.1", "synth", "--out-dir", "x"], &[]);
    assert_eq!(out.status.code(), Some(3));

    // missing data file -> 3
    let out = mixnet(dir, &["eval", "--data-dir", "missing", "--ckpt", "no.ckpt"], &[]);
    assert_eq!(out.status.code(), Some(3));

    // corrupt checkpoint -> 3
    assert_ok(&mixnet(
        dir,
        &{
            let args = small_model("baseline");
            let mut v: Vec<String> = args;
            v.extend(["synth".into(), "--out-dir".into(), "data".into()]);
            v
        }
        .iter()
        .map(String::as_str)
        .collect::<Vec<_>>(),
        &[],
    ));
    std::fs::write(dir.join("bad.ckpt"), b"MIXNET-CKPT v0\n{}\n").unwrap();
    let out = mixnet(dir, &["eval", "--data-dir", "data", "--ckpt", "bad.ckpt"], &[]);
    assert_eq!(out.status.code(), Some(3));

    // bad MIXNET_SEED -> 2
    let out = mixnet(dir, &["params"], &[("MIXNET_SEED", "abc")]);
    assert_eq!(out.status.code(), Some(2));
}
