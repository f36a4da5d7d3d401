//! End-to-end command-line behavior: exit codes, determinism, dataset
//! round trips, and the run-directory layout.

use std::path::Path;
use std::process::Command;

fn ehnn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ehnn"))
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = ehnn().args(args).output().expect("spawn ehnn");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn gen_args<'a>(dir: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "gen-kedge",
        "--out",
        dir,
        "--seed",
        "11",
        "--graphs-train",
        "5",
        "--graphs-test",
        "2",
        "--nodes",
        "18",
        "--edges",
        "4",
    ];
    v.extend_from_slice(extra);
    v
}

#[test]
fn gen_kedge_is_deterministic_and_respects_force() {
    let tmp = tempfile::tempdir().unwrap();
    let d1 = tmp.path().join("a");
    let d2 = tmp.path().join("b");
    let (code, stdout, _) = run(&gen_args(d1.to_str().unwrap(), &[]));
    assert_eq!(code, 0);
    assert!(stdout.contains("5 train + 2 test"));

    // refuses to overwrite without --force
    let (code, _, stderr) = run(&gen_args(d1.to_str().unwrap(), &[]));
    assert_eq!(code, 2);
    assert!(stderr.contains("--force"));
    let (code, _, _) = run(&gen_args(d1.to_str().unwrap(), &["--force"]));
    assert_eq!(code, 0);

    // same seed, byte-identical manifest
    let (code, _, _) = run(&gen_args(d2.to_str().unwrap(), &[]));
    assert_eq!(code, 0);
    let m1 = std::fs::read(d1.join("manifest.json")).unwrap();
    let m2 = std::fs::read(d2.join("manifest.json")).unwrap();
    assert_eq!(m1, m2);
}

#[test]
fn gen_kedge_variants_restrict_train_orders() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("interp");
    let (code, _, _) = run(&gen_args(dir.to_str().unwrap(), &["--variant", "interp"]));
    assert_eq!(code, 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(
        manifest["config"]["train_orders"],
        serde_json::json!([2, 3, 4, 8, 9, 10])
    );
    assert_eq!(
        manifest["config"]["test_orders"],
        serde_json::json!([2, 3, 4, 5, 6, 7, 8, 9, 10])
    );
}

#[test]
fn unknown_flags_and_variants_are_usage_errors() {
    let (code, _, _) = run(&["gen-kedge", "--out", "/tmp/x", "--bogus-flag"]);
    assert_eq!(code, 2);
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("z");
    let (code, _, stderr) = run(&gen_args(dir.to_str().unwrap(), &["--variant", "sideways"]));
    assert_eq!(code, 2);
    assert!(stderr.contains("sideways"));
}

#[test]
fn train_eval_round_trip_with_config_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let (code, _, _) = run(&gen_args(data.to_str().unwrap(), &[]));
    assert_eq!(code, 0);

    let cfg_path = tmp.path().join("train.json");
    let cfg_bytes = serde_json::json!({
        "lr": 1e-3,
        "weight_decay": 0.0,
        "epochs": 6,
        "seed": 3,
        "loss": {"kind": "bce-per-node", "balanced": true},
        "eval_cadence": 2,
        "patience": null,
        "metric": "balanced-accuracy"
    })
    .to_string();
    std::fs::write(&cfg_path, &cfg_bytes).unwrap();

    let run_path = tmp.path().join("run");
    let run_dir = run_path.to_str().unwrap();
    let (code, stdout, stderr) = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--model",
        "alldeepsets",
        "--out",
        run_dir,
        "--config",
        cfg_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "stdout: {stdout} stderr: {stderr}");
    assert!(stdout.contains("best test accuracy"));

    // byte-identical config echo plus the effective config
    let echoed = std::fs::read(Path::new(run_dir).join("config_input.json")).unwrap();
    assert_eq!(echoed, cfg_bytes.as_bytes());
    assert!(Path::new(run_dir).join("effective_config.json").exists());
    assert!(Path::new(run_dir).join("metrics.csv").exists());

    let (code, stdout, _) = run(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        Path::new(run_dir).join("checkpoint.json").to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert!(stdout.contains("test:  accuracy"));
}

#[test]
fn verify_reports_and_exit_codes() {
    let (code, stdout, _) = run(&["verify", "--suite", "reductions", "--seed", "1"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("thm-mlp-channel-routing"));
    assert!(stdout.contains("0 failed"));

    // injected perturbation must break the oracle equivalences
    let (code, stdout, _) = run(&["verify", "--suite", "oracle", "--perturb", "0.001"]);
    assert_eq!(code, 1);
    assert!(stdout.contains("FAIL"));
}

#[test]
fn verify_all_lists_named_checks() {
    let (code, stdout, _) = run(&["verify", "--suite", "oracle", "--seed", "0"]);
    assert_eq!(code, 0);
    let named = [
        "bell-pattern-counts",
        "lemma-symmetric-tying",
        "prop-uniform-reduction",
        "thm-sequence-packed-equivalence",
        "naive-vs-dense-oracle",
    ];
    for n in named {
        assert!(stdout.contains(n), "missing check {n}");
    }
}

#[test]
fn bench_small_instance_emits_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("cost.csv");
    let (code, stdout, stderr) = run(&[
        "bench",
        "--nodes",
        "40",
        "--edges",
        "10",
        "--orders",
        "2..5",
        "--hidden",
        "8",
        "--repeats",
        "1",
        "--variant",
        "alldeepsets",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "stderr: {stderr}");
    assert!(stdout.contains("variant,forward_ms_mean"));
    let body = std::fs::read_to_string(&csv).unwrap();
    let line = body.lines().nth(1).unwrap();
    assert!(line.starts_with("alldeepsets,"));
    // single repeat leaves the std columns empty
    assert_eq!(line.split(',').nth(2), Some(""));
}
