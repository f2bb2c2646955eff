//! End-to-end tests of the command-line surface: artifact shapes, exit
//! codes, and determinism of outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dmpc"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn dmpc")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn simulate_weak_coupling_closed_loop() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate",
        "--config",
        configs().join("weakcoupling.json").to_str().unwrap(),
        "--mode",
        "stable",
        "--steps",
        "30",
        "--x0",
        "[[-11,-18],[2,-19],[15,19]]",
        "--rho",
        "0.5",
        "--tadmm",
        "50",
        "--tcut",
        "50",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let steps = fs::read_to_string(dir.path().join("steps.csv")).unwrap();
    let lines: Vec<&str> = steps.lines().collect();
    assert_eq!(lines.len(), 31); // header + 30 steps
    let header: Vec<&str> = lines[0].split(',').collect();
    let j_col = header.iter().position(|c| *c == "J_cumulative").unwrap();
    let term_col = header.iter().position(|c| *c == "in_terminal").unwrap();
    let last: Vec<&str> = lines[30].split(',').collect();
    let j: f64 = last[j_col].parse().unwrap();
    assert!(j.is_finite() && j > 0.0);
    // the terminal sets are reached strictly before the horizon of the run
    let reached = lines[1..]
        .iter()
        .any(|l| l.split(',').nth(term_col).unwrap() == "1");
    assert!(reached, "terminal sets never reached");
    assert!(dir.path().join("iters.csv").exists());
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn simulate_zero_steps_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate",
        "--config",
        configs().join("weakcoupling.json").to_str().unwrap(),
        "--steps",
        "0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let steps = fs::read_to_string(dir.path().join("steps.csv")).unwrap();
    assert_eq!(steps.lines().count(), 1); // header only
}

#[test]
fn simulate_outside_state_set_fails_with_controller_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate",
        "--config",
        configs().join("weakcoupling.json").to_str().unwrap(),
        "--steps",
        "3",
        "--x0",
        "[[40,0],[0,0],[0,0]]",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_bad_config_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let out = run(&[
        "simulate",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn simulate_deterministic_artifacts() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    for d in [&d1, &d2] {
        let out = run(&[
            "simulate",
            "--config",
            configs().join("quadrant-toy.json").to_str().unwrap(),
            "--mode",
            "plain",
            "--steps",
            "5",
            "--x0",
            "[[4,-2],[-1,3]]",
            "--rho",
            "1.0",
            "--tadmm",
            "30",
            "--tcut",
            "20",
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read(d1.path().join("steps.csv")).unwrap();
    let b = fs::read(d2.path().join("steps.csv")).unwrap();
    assert_eq!(a, b, "steps.csv differs across identical runs");
    let a = fs::read(d1.path().join("iters.csv")).unwrap();
    let b = fs::read(d2.path().join("iters.csv")).unwrap();
    assert_eq!(a, b, "iters.csv differs across identical runs");
}

#[test]
fn terminal_sets_fixed_point_from_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "terminal",
        "--config",
        configs().join("strongcoupling.json").to_str().unwrap(),
        "--x0-sets",
        configs().join("terminal-seeds.json").to_str().unwrap(),
        "--samples",
        "2000",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let payload: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("terminal_sets.json")).unwrap())
            .unwrap();
    assert_eq!(payload["invariance_clean"], true);
    assert_eq!(payload["sets"].as_array().unwrap().len(), 3);
}

#[test]
fn terminal_expanding_dynamics_fails_to_converge() {
    let dir = tempfile::tempdir().unwrap();
    // single expanding subsystem: the iteration halves the seed box forever
    let cfg = serde_json::json!({
        "N": 2,
        "subsystems": [{
            "n": 2, "m": 1,
            "modes": [{
                "A": [[2.0, 0.0], [0.0, 2.0]],
                "B": [[0.0], [0.0]],
                "c": [0.0, 0.0],
                "region": {"H": [[0.0, 0.0]], "h": [1.0]}
            }],
            "X": {"lo": [-10.0, -10.0], "hi": [10.0, 10.0]},
            "U": {"lo": [-1.0], "hi": [1.0]},
            "Q": [[1.0, 0.0], [0.0, 1.0]],
            "R": [[1.0]],
            "terminal": {
                "X_T": {"lo": [-1.0, -1.0], "hi": [1.0, 1.0]},
                "gains": {"0": [[0.0, 0.0]]},
                "Phi": [[1.0, 0.0], [0.0, 1.0]]
            }
        }],
        "neighbors": {"0": []}
    });
    let cfg_path = dir.path().join("expanding.json");
    fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let seeds = serde_json::json!({"sets": [{"lo": [-1.0, -1.0], "hi": [1.0, 1.0]}]});
    let seeds_path = dir.path().join("seeds.json");
    fs::write(&seeds_path, serde_json::to_string(&seeds).unwrap()).unwrap();
    let out = run(&[
        "terminal",
        "--config",
        cfg_path.to_str().unwrap(),
        "--x0-sets",
        seeds_path.to_str().unwrap(),
        "--max-iter",
        "8",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("fixed point"), "unexpected diagnostic: {err}");
}

#[test]
fn terminal_empty_seed_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = serde_json::json!({"sets": [
        {"H": [[0.0, 0.0]], "h": [-1.0]},
        {"H": [[0.0, 0.0]], "h": [-1.0]},
        {"H": [[0.0, 0.0]], "h": [-1.0]}
    ]});
    let seeds_path = dir.path().join("seeds.json");
    fs::write(&seeds_path, serde_json::to_string(&seeds).unwrap()).unwrap();
    let out = run(&[
        "terminal",
        "--config",
        configs().join("strongcoupling.json").to_str().unwrap(),
        "--x0-sets",
        seeds_path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn verify_lyapunov_bundled_weights_pass() {
    let dir = tempfile::tempdir().unwrap();
    for cfg in ["weakcoupling.json", "strongcoupling.json"] {
        let out = run(&[
            "verify-lyapunov",
            "--config",
            configs().join(cfg).to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(
            code(&out),
            0,
            "{cfg}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn verify_lyapunov_identity_weights_fail() {
    let dir = tempfile::tempdir().unwrap();
    let phi = serde_json::json!({"phis": [
        [[1.0, 0.0], [0.0, 1.0]],
        [[1.0, 0.0], [0.0, 1.0]],
        [[1.0, 0.0], [0.0, 1.0]]
    ]});
    let phi_path = dir.path().join("phi.json");
    fs::write(&phi_path, serde_json::to_string(&phi).unwrap()).unwrap();
    let out = run(&[
        "verify-lyapunov",
        "--config",
        configs().join("strongcoupling.json").to_str().unwrap(),
        "--phi",
        phi_path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn verify_lyapunov_malformed_phi_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let phi_path = dir.path().join("phi.json");
    fs::write(&phi_path, "{\"phis\": \"nope\"}").unwrap();
    let out = run(&[
        "verify-lyapunov",
        "--config",
        configs().join("weakcoupling.json").to_str().unwrap(),
        "--phi",
        phi_path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn study_deterministic_and_empty() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    for d in [&d1, &d2] {
        let out = run(&[
            "study",
            "--seed",
            "7",
            "--n",
            "100",
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read(d1.path().join("study.json")).unwrap();
    let b = fs::read(d2.path().join("study.json")).unwrap();
    assert_eq!(a, b, "study.json differs for identical seeds");
    let stats: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert!(stats["median"].as_f64().unwrap() <= 1.0);
    assert!(stats["min"].as_f64().unwrap() >= 0.0);

    let d3 = tempfile::tempdir().unwrap();
    let out = run(&["study", "--n", "0", "--out", d3.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let stats: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d3.path().join("study.json")).unwrap()).unwrap();
    assert_eq!(stats["n_samples"], 0);
}

#[test]
fn oracle_sixteen_sequences_and_comparison() {
    let out = run(&[
        "oracle",
        "--config",
        configs().join("halfplane-toy.json").to_str().unwrap(),
        "--x0",
        "[[-1.5],[-1.0]]",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("16 candidate sequences"), "{text}");
    assert!(text.contains("suboptimality"), "{text}");
    // the consensus run never beats the enumerated optimum
    let sub_line = text.lines().find(|l| l.contains("suboptimality")).unwrap();
    let value: f64 = sub_line
        .split_whitespace()
        .rev()
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!(value >= -1e-6, "negative suboptimality: {value}");
}

#[test]
fn oracle_capacity_exceeded() {
    let out = run(&[
        "oracle",
        "--config",
        configs().join("quadrant-toy.json").to_str().unwrap(),
        "--cap",
        "10",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("cap"));
}

#[test]
fn doclint_passes_on_bundled_docs() {
    let docs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs");
    let out = run(&["doclint", "--dir", docs.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bundled_configs_parse_and_validate() {
    for cfg in [
        "weakcoupling.json",
        "strongcoupling.json",
        "quadrant-toy.json",
        "halfplane-toy.json",
    ] {
        let text = fs::read_to_string(configs().join(cfg)).unwrap();
        let net =
            dmpc_core::config::network_from_json(&text).unwrap_or_else(|e| panic!("{cfg}: {e}"));
        let report = net.validate(200);
        assert!(report.is_clean(), "{cfg}: {report:?}");
    }
}
