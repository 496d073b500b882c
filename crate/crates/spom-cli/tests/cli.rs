//! End-to-end command-line checks: exit codes, output files, idempotence.

use std::path::Path;
use std::process::{Command, Output};

fn spom(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spom"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn spom")
}

fn assert_exit(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn no_arguments_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let output = spom(&[], dir.path());
    assert_exit(&output, 2);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("Usage"), "{stderr}");
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_exit(&spom(&["frobnicate"], dir.path()), 2);
}

#[test]
fn runtime_failures_exit_one_with_structured_error() {
    let dir = tempfile::tempdir().unwrap();
    let output = spom(&["stats", "--manifest", "no-such-file.jsonl"], dir.path());
    assert_exit(&output, 1);
    let stderr = String::from_utf8_lossy(&output.stderr);
    let parsed: serde_json::Value = serde_json::from_str(stderr.trim()).expect("structured stderr");
    assert!(parsed["error"].is_string());
}

#[test]
fn full_pipeline_runs_clean() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    assert_exit(
        &spom(
            &[
                "synth",
                "--episodes",
                "70",
                "--failure-rate",
                "0.5",
                "--seed",
                "3",
                "--videos",
                "2",
                "--frames",
                "4",
                "--out",
                "data",
            ],
            root,
        ),
        0,
    );
    assert!(root.join("data/manifest.jsonl").exists());
    assert!(root.join("data/registry.json").exists());
    assert!(root.join("data/features").is_dir());

    assert_exit(
        &spom(
            &[
                "split",
                "--manifest",
                "data/manifest.jsonl",
                "--sizes",
                "56,8,8",
                "--seed",
                "1",
                "--out",
                "data",
            ],
            root,
        ),
        0,
    );

    let stats = spom(&["stats", "--manifest", "data/manifest.jsonl", "--json"], root);
    assert_exit(&stats, 0);
    let report: serde_json::Value =
        serde_json::from_slice(&stats.stdout).expect("stats json");
    assert_eq!(report["total"], 72);

    assert_exit(
        &spom(
            &[
                "train",
                "--manifest",
                "data/manifest.jsonl",
                "--features",
                "data/features",
                "--split",
                "data/split.json",
                "--out",
                "run",
                "--epochs",
                "2",
                "--batch-size",
                "8",
            ],
            root,
        ),
        0,
    );
    assert!(root.join("run/checkpoint.lrck").exists());
    assert!(root.join("run/run.json").exists());
    assert!(root.join("run/config.json").exists());
    let curve = std::fs::read_to_string(root.join("run/run.csv")).unwrap();
    assert!(curve.starts_with("epoch,train_loss,val_accuracy\n"));
    assert_eq!(curve.lines().count(), 3); // header + 2 epochs

    assert_exit(
        &spom(
            &[
                "eval",
                "--checkpoint",
                "run/checkpoint.lrck",
                "--manifest",
                "data/manifest.jsonl",
                "--features",
                "data/features",
                "--split",
                "data/split.json",
                "--out",
                "run/eval",
            ],
            root,
        ),
        0,
    );
    let eval: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("run/eval/eval.json")).unwrap())
            .unwrap();
    assert!(eval["digest"].is_number());
    assert_eq!(
        eval["matrix"]["true_pos"].as_u64().unwrap()
            + eval["matrix"]["false_pos"].as_u64().unwrap()
            + eval["matrix"]["true_neg"].as_u64().unwrap()
            + eval["matrix"]["false_neg"].as_u64().unwrap(),
        8
    );

    assert_exit(
        &spom(
            &[
                "video",
                "--checkpoint",
                "run/checkpoint.lrck",
                "--manifest",
                "data/manifest.jsonl",
                "--features",
                "data/features",
                "--out",
                "run/video",
            ],
            root,
        ),
        0,
    );
    assert!(root.join("run/video/video.json").exists());

    assert_exit(&spom(&["params", "--profile", "desk"], root), 0);
}

#[test]
fn split_is_deterministic_and_leaves_inputs_alone() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_exit(
        &spom(
            &["synth", "--episodes", "30", "--seed", "5", "--out", "data"],
            root,
        ),
        0,
    );
    let manifest_before = std::fs::read(root.join("data/manifest.jsonl")).unwrap();

    for out in ["s1", "s2"] {
        assert_exit(
            &spom(
                &[
                    "split",
                    "--manifest",
                    "data/manifest.jsonl",
                    "--sizes",
                    "20,5,5",
                    "--seed",
                    "9",
                    "--out",
                    out,
                ],
                root,
            ),
            0,
        );
    }
    let a = std::fs::read(root.join("s1/split.json")).unwrap();
    let b = std::fs::read(root.join("s2/split.json")).unwrap();
    assert_eq!(a, b, "same seed must reproduce the same split file");

    let manifest_after = std::fs::read(root.join("data/manifest.jsonl")).unwrap();
    assert_eq!(manifest_before, manifest_after, "inputs must not be touched");
}

#[test]
fn full_scale_split_sizes_work_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let episodes = spom::dataset::stats_fixture(10_000, 3_915, 49, 78_790, 1).unwrap();
    spom::dataset::save_manifest(&root.join("m.jsonl"), &episodes).unwrap();

    let stats = spom(&["stats", "--manifest", "m.jsonl", "--json"], root);
    assert_exit(&stats, 0);
    let report: serde_json::Value = serde_json::from_slice(&stats.stdout).unwrap();
    assert_eq!(report["total"], 13_915);
    assert_eq!(report["positives"], 10_000);
    assert_eq!(report["negatives"], 3_915);
    assert_eq!(report["vocabulary_size"], 49);

    assert_exit(
        &spom(
            &[
                "split",
                "--manifest",
                "m.jsonl",
                "--sizes",
                "11915,1000,1000",
                "--seed",
                "1",
                "--out",
                "out",
            ],
            root,
        ),
        0,
    );
    let split: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("out/split.json")).unwrap())
            .unwrap();
    assert_eq!(split["train"].as_array().unwrap().len(), 11_915);
    assert_eq!(split["val"].as_array().unwrap().len(), 1_000);
    assert_eq!(split["test"].as_array().unwrap().len(), 1_000);
}

#[test]
fn cleanse_reports_flag_count() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let manifest = root.join("m.jsonl");
    let lines = [
        r#"{"episode_id":"e1","instruction":"pick red mug","label":1}"#,
        r#"{"episode_id":"e2","instruction":"pick blue can","label":0,"flagged_mislabel":true}"#,
        r#"{"episode_id":"e3","instruction":"knock white bottle over","label":0}"#,
    ];
    std::fs::write(&manifest, lines.join("\n")).unwrap();

    let output = spom(
        &["cleanse", "--manifest", "m.jsonl", "--out", "clean", "--seed", "4"],
        root,
    );
    assert_exit(&output, 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("clean/cleanse.json")).unwrap())
            .unwrap();
    assert_eq!(report["replaced"], 1);

    let cleansed = std::fs::read_to_string(root.join("clean/cleansed.jsonl")).unwrap();
    let e2: serde_json::Value =
        serde_json::from_str(cleansed.lines().nth(1).unwrap()).unwrap();
    assert_eq!(e2["label"], 0);
    assert_ne!(e2["instruction"], "pick blue can");
}

#[test]
fn gradcheck_exit_codes_follow_the_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let ok = spom(&["gradcheck", "--dims", "4", "--seeds", "2"], dir.path());
    assert_exit(&ok, 0);
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.contains("max relative error"), "{stdout}");

    // A huge step makes central differences useless; the check must fail.
    let bad = spom(
        &["gradcheck", "--dims", "4", "--seeds", "1", "--step", "10.0"],
        dir.path(),
    );
    assert_exit(&bad, 1);
}

#[test]
fn config_file_merges_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_exit(
        &spom(
            &["synth", "--episodes", "40", "--seed", "6", "--out", "data"],
            root,
        ),
        0,
    );
    assert_exit(
        &spom(
            &[
                "split",
                "--manifest",
                "data/manifest.jsonl",
                "--sizes",
                "30,5,5",
                "--seed",
                "2",
                "--out",
                "data",
            ],
            root,
        ),
        0,
    );
    // Config asks for 7 epochs and a distinctive seed; the flag overrides
    // the epochs but not the seed.
    std::fs::write(
        root.join("override.json"),
        r#"{"train": {"epochs": 7, "seed": 4242, "batch_size": 8}}"#,
    )
    .unwrap();
    assert_exit(
        &spom(
            &[
                "train",
                "--manifest",
                "data/manifest.jsonl",
                "--features",
                "data/features",
                "--split",
                "data/split.json",
                "--config",
                "override.json",
                "--epochs",
                "2",
                "--out",
                "run",
            ],
            root,
        ),
        0,
    );
    let run: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("run/run.json")).unwrap()).unwrap();
    assert_eq!(run["train_loss"].as_array().unwrap().len(), 2, "flag wins");
    assert_eq!(run["seed"], 4242, "config file beats the profile default");
}
