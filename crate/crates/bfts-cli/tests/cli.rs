//! End-to-end checks of the command-line interface: exit codes, file
//! outputs, and rerun determinism.

use std::path::Path;
use std::process::{Command, Output};

fn bfts(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bfts"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_then_evaluate_assortativity() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    let out = bfts(&[
        "generate",
        "--out",
        path_str(&g),
        "--block-sizes",
        "24,16",
        "--seed",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["edges.tsv", "features.csv", "labels.csv"] {
        assert!(g.join(file).exists(), "{file} missing");
    }

    let out = bfts(&["evaluate", "--graph", path_str(&g), "--metric", "assortativity"]);
    assert!(out.status.success());
    let value: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!((-1.0..=1.0).contains(&value));
}

#[test]
fn generate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for g in [&a, &b] {
        let out = bfts(&[
            "generate",
            "--out",
            path_str(g),
            "--block-sizes",
            "20,12",
            "--seed",
            "9",
        ]);
        assert!(out.status.success());
    }
    for file in ["edges.tsv", "features.csv", "labels.csv"] {
        let x = std::fs::read(a.join(file)).unwrap();
        let y = std::fs::read(b.join(file)).unwrap();
        assert_eq!(x, y, "{file} differs between identical invocations");
    }
}

#[test]
fn invalid_usage_exits_one() {
    let out = bfts(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(1));
    let out = bfts(&["train"]); // missing required flags
    assert_eq!(out.status.code(), Some(1));
    let out = bfts(&["mask", "--graph", "x", "--out", "y", "--kind", "bogus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    let out = bfts(&[
        "generate",
        "--out",
        path_str(&g),
        "--block-sizes",
        "10,8",
        "--seed",
        "1",
    ]);
    assert!(out.status.success());
    // corrupt the edge file with a self-loop
    std::fs::write(g.join("edges.tsv"), "3\t3\n").unwrap();
    let out = bfts(&["evaluate", "--graph", path_str(&g), "--metric", "assortativity"]);
    assert_eq!(out.status.code(), Some(2));

    // missing graph directory
    let out = bfts(&[
        "evaluate",
        "--graph",
        path_str(&dir.path().join("nope")),
        "--metric",
        "assortativity",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn mask_train_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    let gm = dir.path().join("gm");
    let run = dir.path().join("run");
    assert!(bfts(&[
        "generate",
        "--out",
        path_str(&g),
        "--block-sizes",
        "30,20",
        "--seed",
        "5"
    ])
    .status
    .success());
    assert!(bfts(&[
        "mask",
        "--graph",
        path_str(&g),
        "--out",
        path_str(&gm),
        "--kind",
        "degree",
        "--observed-frac",
        "0.4",
        "--seed",
        "2"
    ])
    .status
    .success());
    let out = bfts(&[
        "train",
        "--graph",
        path_str(&gm),
        "--out",
        path_str(&run),
        "--mode",
        "bfts",
        "--alpha",
        "1",
        "--beta",
        "1",
        "--epochs",
        "3",
        "--seed",
        "4",
        "--classifier-hidden",
        "6",
        "--imputer-hidden",
        "6",
        "--adversary-hidden",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("checkpoint.ckpt").exists());
    let losses = std::fs::read_to_string(run.join("losses.csv")).unwrap();
    assert!(losses.starts_with("epoch,loss_c,loss_i,loss_a,val_avpr"));
    assert_eq!(losses.lines().count(), 4); // header + 3 epochs

    let out = bfts(&[
        "evaluate",
        "--graph",
        path_str(&gm),
        "--checkpoint",
        path_str(&run.join("checkpoint.ckpt")),
        "--mode",
        "bfts",
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("mode,alpha,beta,observed_frac,seed"));
    assert_eq!(stdout.lines().count(), 2);
}

#[test]
fn config_file_supplies_defaults_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfgfile = dir.path().join("gen.json");
    std::fs::write(
        &cfgfile,
        r#"{"block-sizes": "16,10", "seed": 4, "gamma": 2.0}"#,
    )
    .unwrap();
    let a = dir.path().join("a");
    let out = bfts(&["generate", "--out", path_str(&a), "--config", path_str(&cfgfile)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let labels = std::fs::read_to_string(a.join("labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 27); // header + 26 nodes

    // a flag overrides the file's seed: different edge sample
    let b = dir.path().join("b");
    let out = bfts(&[
        "generate",
        "--out",
        path_str(&b),
        "--config",
        path_str(&cfgfile),
        "--seed",
        "5",
    ]);
    assert!(out.status.success());
    let ea = std::fs::read(a.join("edges.tsv")).unwrap();
    let eb = std::fs::read(b.join("edges.tsv")).unwrap();
    assert_ne!(ea, eb);
}

#[test]
fn sweep_runs_plan_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let plan_path = dir.path().join("plan.json");
    let out_dir = dir.path().join("sweep");
    let plan = format!(
        r#"{{
  "sbm": {{"block_sizes": [16, 12], "p_in": 0.3, "p_out": 0.03, "p_bias": 0.7,
           "n_features": 5, "n_noise": 2, "gamma": 1.5, "seed": 0}},
  "missingness": "degree",
  "modes": ["vanilla"],
  "alpha_grid": [0.0],
  "beta_grid": [1.0],
  "observed_frac_grid": [0.5],
  "seeds": [1, 2],
  "train": {{"mode": "vanilla", "alpha": 0.0, "beta": 1.0, "ldam_c": 0.5,
            "imputation_loss": "ldam", "lr_classifier": 0.001, "lr_imputer": 0.001,
            "lr_adversary": 0.001, "epochs": 2, "seed": 0,
            "sensitive_mode": "observed", "classifier_hidden": 6,
            "imputer_hidden": 6, "adversary_hidden": 3, "dropout": 0.5}},
  "out_dir": {out:?}
}}"#,
        out = out_dir.to_str().unwrap()
    );
    std::fs::write(&plan_path, plan).unwrap();
    let out = bfts(&["sweep", "--plan", path_str(&plan_path), "--workers", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3); // header + 2 cells
    assert!(out_dir.join("tradeoff_dp.csv").exists());
    assert!(out_dir.join("failures.csv").exists());
}

#[test]
fn verify_inject_failure_flips_check_and_exit_code() {
    // cheap targeted check: the injection must fail and set exit 3
    let out = bfts(&["verify", "--inject-failure", "js-identity"]);
    assert_eq!(out.status.code(), Some(3));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL js-identity"));
    assert!(stdout.contains("PASS metric-oracles"));

    // unknown check name is a usage error
    let out = bfts(&["verify", "--inject-failure", "bogus"]);
    assert_eq!(out.status.code(), Some(1));
}
