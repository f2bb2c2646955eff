//! Command-line driver: closed-loop simulations, terminal-set computation,
//! terminal-cost verification, the randomized suboptimality study, and the
//! enumeration oracle. Outputs are CSV/JSON artifacts plus a run manifest
//! with content checksums; identical inputs reproduce identical artifacts.
//!
//! Exit codes: 0 success, 1 input error, 2 runtime/controller error,
//! 3 negative verification.
//!
//! Solver settings can be overridden through the environment:
//! `DMPC_FEAS_TOL`, `DMPC_GAP_TOL`, `DMPC_MAX_ITER`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::Serialize;
use sha2::{Digest, Sha256};

use dmpc_core::admm::AdmmOpts;
use dmpc_core::config::{network_from_json, PhiFile, SetsFile};
use dmpc_core::model::PwaNetwork;
use dmpc_core::mpc::{simulate, ControlMode, ControllerConfig};
use dmpc_core::oracle::{self, OracleOpts, StudyOpts};
use dmpc_core::qp::QpSettings;
use dmpc_core::switching::d_rout;
use dmpc_core::terminal::{compute_terminal_sets, verify_invariance, verify_terminal_cost};

#[derive(Parser)]
#[command(
    name = "dmpc",
    about = "Distributed MPC for coupled piecewise-affine networks",
    long_about = None,
    version
)]
struct Cli {
    /// Log verbosity: off, error, info, debug
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-loop simulation writing steps.csv, iters.csv and manifest.json.
    ///
    /// steps.csv columns: t, x<i>_<d>.., u<i>_<d>.., residual, switches,
    /// guard, in_terminal, messages, stage_cost, J_cumulative.
    /// iters.csv columns: t, tau, agent, residual, objective, switched, s_i.
    Simulate(SimulateArgs),
    /// Terminal-set fixed point from seed sets; writes sets and an
    /// invariance report.
    Terminal(TerminalArgs),
    /// Eigenvalue check of the terminal-cost condition over all origin-mode
    /// combinations. Exit 3 when the check fails.
    VerifyLyapunov(VerifyArgs),
    /// Randomized two-subsystem suboptimality study against the oracle.
    Study(StudyArgs),
    /// Brute-force enumeration of global switching sequences at one state.
    Oracle(OracleArgs),
    /// Lint the documentation tree: operation map coverage and uniqueness
    /// of the design-decision register.
    Doclint(DoclintArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Network configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Controller flavor.
    #[arg(long, default_value = "stable", value_parser = ["plain", "stable"])]
    mode: String,
    /// Closed-loop steps.
    #[arg(long, default_value_t = 30)]
    steps: usize,
    /// Initial state as JSON, e.g. "[[-11,-18],[2,-19],[15,19]]".
    /// Defaults to zeros.
    #[arg(long)]
    x0: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 50)]
    tadmm: usize,
    #[arg(long, default_value_t = 50)]
    tcut: usize,
    /// Residual threshold for early termination (omit to always run the
    /// full iteration budget).
    #[arg(long)]
    target_residual: Option<f64>,
    /// Extra multi-start guess strategies beside the default warm start:
    /// "zeros" may be repeated.
    #[arg(long = "multi-start")]
    multi_start: Vec<String>,
    /// Soften local state constraints with this linear slack penalty.
    #[arg(long)]
    soft_state: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Deterministic tag recorded in the manifest.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TerminalArgs {
    #[arg(long)]
    config: PathBuf,
    /// Seed sets JSON: {"sets": [{"H": .., "h": ..} | {"lo": .., "hi": ..}, ..]}.
    #[arg(long = "x0-sets")]
    x0_sets: PathBuf,
    #[arg(long, default_value_t = 50)]
    max_iter: usize,
    /// Invariance-check samples per subsystem.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    config: PathBuf,
    /// Optional terminal-cost weights {"phis": [[[..]..]]}; defaults to the
    /// weights in the configuration.
    #[arg(long)]
    phi: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Prediction horizon of the generated instances.
    #[arg(long, default_value_t = 3)]
    horizon: usize,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    config: PathBuf,
    /// State as JSON; defaults to zeros.
    #[arg(long)]
    x0: Option<String>,
    /// Also run the consensus procedure and report the suboptimality.
    #[arg(long, default_value_t = true)]
    compare: bool,
    #[arg(long, default_value_t = 100_000)]
    cap: u128,
}

#[derive(Args)]
struct DoclintArgs {
    /// Documentation tree root.
    #[arg(long, default_value = "docs")]
    dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Terminal(a) => cmd_terminal(a),
        Command::VerifyLyapunov(a) => cmd_verify_lyapunov(a),
        Command::Study(a) => cmd_study(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Doclint(a) => cmd_doclint(a),
    };
    ExitCode::from(code)
}

/// Backend tolerances with optional environment overrides.
fn qp_settings() -> QpSettings {
    let mut settings = QpSettings::default();
    if let Ok(v) = std::env::var("DMPC_FEAS_TOL") {
        if let Ok(v) = v.parse() {
            settings.feas_tol = v;
        }
    }
    if let Ok(v) = std::env::var("DMPC_GAP_TOL") {
        if let Ok(v) = v.parse() {
            settings.gap_tol = v;
        }
    }
    if let Ok(v) = std::env::var("DMPC_MAX_ITER") {
        if let Ok(v) = v.parse() {
            settings.max_iter = v;
        }
    }
    settings
}

fn read_network(path: &Path) -> Result<PwaNetwork, String> {
    let text =
        fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    network_from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn parse_x0(net: &PwaNetwork, arg: &Option<String>) -> Result<Vec<DVector<f64>>, String> {
    match arg {
        None => Ok(net
            .subsystems
            .iter()
            .map(|s| DVector::zeros(s.state_dim))
            .collect()),
        Some(text) => {
            let raw: Vec<Vec<f64>> =
                serde_json::from_str(text).map_err(|e| format!("--x0: {e}"))?;
            if raw.len() != net.n_subsystems() {
                return Err(format!(
                    "--x0 has {} vectors, network has {} subsystems",
                    raw.len(),
                    net.n_subsystems()
                ));
            }
            for (i, v) in raw.iter().enumerate() {
                if v.len() != net.subsystems[i].state_dim {
                    return Err(format!("--x0 entry {i} has wrong dimension"));
                }
            }
            Ok(raw.into_iter().map(DVector::from_vec).collect())
        }
    }
}

/// Floats are printed with 17 significant digits so parsed values
/// round-trip exactly.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    config: Option<String>,
    seed: u64,
    overrides: BTreeMap<String, String>,
    output_dir: String,
    artifacts: BTreeMap<String, String>,
}

fn write_manifest(
    out_dir: &Path,
    command: &str,
    config: Option<&Path>,
    seed: u64,
    overrides: BTreeMap<String, String>,
    files: &[&str],
) -> Result<(), String> {
    let mut artifacts = BTreeMap::new();
    for f in files {
        let data = fs::read(out_dir.join(f)).map_err(|e| format!("checksum {f}: {e}"))?;
        let mut hasher = Sha256::new();
        hasher.update(&data);
        artifacts.insert((*f).to_string(), format!("{:x}", hasher.finalize()));
    }
    let manifest = Manifest {
        command: command.to_string(),
        config: config.map(|p| p.display().to_string()),
        seed,
        overrides,
        output_dir: out_dir.display().to_string(),
        artifacts,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| e.to_string())?;
    // atomic finalize: write to a temp name, then rename into place
    let tmp = out_dir.join(".manifest.json.tmp");
    fs::write(&tmp, text).map_err(|e| e.to_string())?;
    fs::rename(&tmp, out_dir.join("manifest.json")).map_err(|e| e.to_string())?;
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> u8 {
    let net = match read_network(&a.config) {
        Ok(n) => n,
        Err(e) => return input_error(&e),
    };
    let x0 = match parse_x0(&net, &a.x0) {
        Ok(x) => x,
        Err(e) => return input_error(&e),
    };
    if let Err(e) = fs::create_dir_all(&a.out) {
        return input_error(&format!("cannot create {}: {e}", a.out.display()));
    }
    let mode = if a.mode == "plain" {
        ControlMode::Plain
    } else {
        ControlMode::Stable
    };
    let admm = AdmmOpts {
        rho: a.rho,
        t_admm: a.tadmm,
        t_cut: a.tcut,
        target_residual: a.target_residual,
        early_stop: a.target_residual.is_some(),
        eval_tol: 1e-9,
        terminal_on: mode == ControlMode::Stable,
        record_trace: true,
        soft_state_penalty: a.soft_state,
        ..AdmmOpts::default()
    };
    let mut cfg = match mode {
        ControlMode::Plain => ControllerConfig::plain(admm),
        ControlMode::Stable => ControllerConfig::stable(admm),
    };
    cfg.qp = qp_settings();
    for extra in &a.multi_start {
        match extra.as_str() {
            "zeros" => cfg.multi_start.push(dmpc_core::mpc::GuessStrategy::Zeros),
            other => return input_error(&format!("unknown guess strategy `{other}`")),
        }
    }

    let sim = match simulate(&net, &x0, &cfg, a.steps) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("controller error: {e}");
            return 2;
        }
    };

    // steps.csv
    let mut csv = String::new();
    let mut header = vec!["t".to_string()];
    for (i, sub) in net.subsystems.iter().enumerate() {
        for d in 0..sub.state_dim {
            header.push(format!("x{i}_{d}"));
        }
    }
    for (i, sub) in net.subsystems.iter().enumerate() {
        for d in 0..sub.input_dim {
            header.push(format!("u{i}_{d}"));
        }
    }
    header.extend(
        [
            "residual",
            "switches",
            "guard",
            "in_terminal",
            "messages",
            "stage_cost",
            "J_cumulative",
        ]
        .map(str::to_string),
    );
    csv.push_str(&header.join(","));
    csv.push('\n');
    for s in &sim.steps {
        let mut row = vec![s.t.to_string()];
        for xi in &s.x {
            for v in xi.iter() {
                row.push(fmt(*v));
            }
        }
        for ui in &s.u0 {
            for v in ui.iter() {
                row.push(fmt(*v));
            }
        }
        row.push(fmt(s.residual));
        row.push(s.switches.to_string());
        row.push((s.guard_triggered as u8).to_string());
        row.push((s.in_terminal as u8).to_string());
        row.push(s.messages.to_string());
        row.push(fmt(s.stage_cost));
        row.push(fmt(s.j_cumulative));
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    if let Err(e) = fs::write(a.out.join("steps.csv"), csv) {
        return runtime_error(&e.to_string());
    }

    // iters.csv
    let mut csv = String::from("t,tau,agent,residual,objective,switched,s_i\n");
    for (t, ir) in &sim.iter_trace {
        csv.push_str(&format!(
            "{t},{},{},{},{},{},{}\n",
            ir.tau,
            ir.agent,
            fmt(ir.residual),
            fmt(ir.objective),
            ir.switched as u8,
            ir.seq
        ));
    }
    if let Err(e) = fs::write(a.out.join("iters.csv"), csv) {
        return runtime_error(&e.to_string());
    }

    let mut overrides = BTreeMap::new();
    overrides.insert("mode".into(), a.mode.clone());
    overrides.insert("steps".into(), a.steps.to_string());
    overrides.insert("rho".into(), a.rho.to_string());
    overrides.insert("tadmm".into(), a.tadmm.to_string());
    overrides.insert("tcut".into(), a.tcut.to_string());
    if let Some(t) = a.target_residual {
        overrides.insert("target_residual".into(), t.to_string());
    }
    if let Some(x) = &a.x0 {
        overrides.insert("x0".into(), x.clone());
    }
    if let Err(e) = write_manifest(
        &a.out,
        "simulate",
        Some(&a.config),
        a.seed,
        overrides,
        &["steps.csv", "iters.csv"],
    ) {
        return runtime_error(&e);
    }
    println!(
        "simulate: {} steps written to {} (final residual {:.3e})",
        sim.steps.len(),
        a.out.display(),
        sim.steps.last().map(|s| s.residual).unwrap_or(0.0)
    );
    0
}

fn cmd_terminal(a: TerminalArgs) -> u8 {
    let net = match read_network(&a.config) {
        Ok(n) => n,
        Err(e) => return input_error(&e),
    };
    let text = match fs::read_to_string(&a.x0_sets) {
        Ok(t) => t,
        Err(e) => return input_error(&format!("{}: {e}", a.x0_sets.display())),
    };
    let sets_file: SetsFile = match serde_json::from_str(&text) {
        Ok(s) => s,
        Err(e) => return input_error(&format!("{}: {e}", a.x0_sets.display())),
    };
    if sets_file.sets.len() != net.n_subsystems() {
        return input_error("seed set count does not match the subsystems");
    }
    for (i, s) in sets_file.sets.iter().enumerate() {
        match s.is_empty() {
            Ok(true) => return input_error(&format!("seed set {i} is empty")),
            Ok(false) => {}
            Err(e) => return runtime_error(&e.to_string()),
        }
    }
    if let Err(e) = fs::create_dir_all(&a.out) {
        return input_error(&format!("cannot create {}: {e}", a.out.display()));
    }
    let gains: Vec<_> = net
        .subsystems
        .iter()
        .map(|s| {
            s.terminal
                .as_ref()
                .map(|t| t.gains.clone())
                .unwrap_or_default()
        })
        .collect();
    let sets = match compute_terminal_sets(&net, &sets_file.sets, &gains, a.max_iter) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("terminal-set computation failed: {e}");
            return 2;
        }
    };
    let report = match verify_invariance(&net, &sets, &gains, a.samples) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("invariance check failed: {e}");
            return 2;
        }
    };

    #[derive(Serialize)]
    struct TerminalOut<'a> {
        sets: &'a [dmpc_core::polytope::HPolytope],
        invariance_clean: bool,
        violations: usize,
        samples_checked: usize,
        exact_agents: &'a [usize],
    }
    let payload = TerminalOut {
        sets: &sets,
        invariance_clean: report.is_clean(),
        violations: report.violations.len(),
        samples_checked: report.samples_checked,
        exact_agents: &report.exact_agents,
    };
    if let Err(e) = fs::write(
        a.out.join("terminal_sets.json"),
        serde_json::to_string_pretty(&payload).expect("serializable"),
    ) {
        return runtime_error(&e.to_string());
    }
    if let Err(e) = write_manifest(
        &a.out,
        "terminal",
        Some(&a.config),
        0,
        BTreeMap::new(),
        &["terminal_sets.json"],
    ) {
        return runtime_error(&e);
    }
    println!(
        "terminal: fixed point with {} sets, invariance clean: {}",
        sets.len(),
        report.is_clean()
    );
    if report.is_clean() {
        0
    } else {
        3
    }
}

fn cmd_verify_lyapunov(a: VerifyArgs) -> u8 {
    let net = match read_network(&a.config) {
        Ok(n) => n,
        Err(e) => return input_error(&e),
    };
    let phis = match &a.phi {
        Some(path) => {
            let text = match fs::read_to_string(path) {
                Ok(t) => t,
                Err(e) => return input_error(&format!("{}: {e}", path.display())),
            };
            let pf: PhiFile = match serde_json::from_str(&text) {
                Ok(p) => p,
                Err(e) => return input_error(&format!("{}: {e}", path.display())),
            };
            match pf.into_matrices() {
                Ok(m) => m,
                Err(e) => return input_error(&e.to_string()),
            }
        }
        None => {
            let mut out = Vec::new();
            for (i, s) in net.subsystems.iter().enumerate() {
                match &s.terminal {
                    Some(t) => out.push(t.phi.clone()),
                    None => {
                        return input_error(&format!(
                            "subsystem {i} has no terminal cost and no --phi file given"
                        ))
                    }
                }
            }
            out
        }
    };
    if phis.len() != net.n_subsystems() {
        return input_error("one Phi block per subsystem required");
    }
    let gains: Vec<_> = net
        .subsystems
        .iter()
        .map(|s| {
            s.terminal
                .as_ref()
                .map(|t| t.gains.clone())
                .unwrap_or_default()
        })
        .collect();
    let report = match verify_terminal_cost(&net, &phis, &gains) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("verification failed to run: {e}");
            return 2;
        }
    };
    if let Err(e) = fs::create_dir_all(&a.out) {
        return input_error(&format!("cannot create {}: {e}", a.out.display()));
    }
    #[derive(Serialize)]
    struct LyapOut {
        pass: bool,
        max_lambda: f64,
        eig_tol: f64,
        combos: usize,
    }
    let payload = LyapOut {
        pass: report.pass,
        max_lambda: report.max_lambda,
        eig_tol: report.eig_tol,
        combos: report.per_mode.len(),
    };
    if let Err(e) = fs::write(
        a.out.join("lyapunov.json"),
        serde_json::to_string_pretty(&payload).expect("serializable"),
    ) {
        return runtime_error(&e.to_string());
    }
    println!(
        "verify-lyapunov: {} combinations, max lambda {:.6e} -> {}",
        report.per_mode.len(),
        report.max_lambda,
        if report.pass { "PASS" } else { "FAIL" }
    );
    if report.pass {
        0
    } else {
        3
    }
}

fn cmd_study(a: StudyArgs) -> u8 {
    if let Err(e) = fs::create_dir_all(&a.out) {
        return input_error(&format!("cannot create {}: {e}", a.out.display()));
    }
    let opts = StudyOpts {
        horizon: a.horizon,
        rho: a.rho,
        ..StudyOpts::default()
    };
    let stats = oracle::randomized_study(a.seed, a.n, &opts);
    let text = serde_json::to_string_pretty(&stats).expect("serializable");
    if let Err(e) = fs::write(a.out.join("study.json"), text) {
        return runtime_error(&e.to_string());
    }
    let mut overrides = BTreeMap::new();
    overrides.insert("n".into(), a.n.to_string());
    overrides.insert("horizon".into(), a.horizon.to_string());
    overrides.insert("rho".into(), a.rho.to_string());
    if let Err(e) = write_manifest(&a.out, "study", None, a.seed, overrides, &["study.json"]) {
        return runtime_error(&e);
    }
    println!(
        "study: {} samples ({} skipped), median {:.4}, mean {:.4}, max {:.4}",
        stats.n_samples, stats.skipped, stats.median, stats.mean, stats.max
    );
    0
}

fn cmd_oracle(a: OracleArgs) -> u8 {
    let net = match read_network(&a.config) {
        Ok(n) => n,
        Err(e) => return input_error(&e),
    };
    let x0 = match parse_x0(&net, &a.x0) {
        Ok(x) => x,
        Err(e) => return input_error(&e),
    };
    let opts = OracleOpts {
        enumeration_cap: a.cap,
        ..OracleOpts::default()
    };
    let res = match oracle::global_optimum(&net, &x0, &opts) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("oracle failed: {e}");
            return 2;
        }
    };
    println!(
        "oracle: {} candidate sequences, {} feasible examined, best value {:.9e}",
        res.n_sequences_total, res.n_feasible, res.best_value
    );
    if a.compare {
        let guesses: Vec<Vec<DVector<f64>>> = net
            .subsystems
            .iter()
            .map(|s| vec![DVector::zeros(s.input_dim); net.horizon])
            .collect();
        let rollout = match d_rout(&net, &x0, &guesses) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("rollout failed: {e}");
                return 2;
            }
        };
        let admm_opts = AdmmOpts {
            rho: 1.0,
            t_admm: 1000,
            t_cut: 100,
            target_residual: Some(0.01),
            early_stop: true,
            eval_tol: 1e-9,
            ..AdmmOpts::default()
        };
        let out = match dmpc_core::admm::sw_admm(
            &net,
            &x0,
            &guesses,
            &rollout,
            &admm_opts,
            &qp_settings(),
        ) {
            Ok(o) => o,
            Err(e) => {
                eprintln!("consensus run failed: {e}");
                return 2;
            }
        };
        let u: Vec<Vec<DVector<f64>>> = out.bundles.iter().map(|b| b.u_seq.clone()).collect();
        let v = match net.global_value_with(&x0, &u, 0.1) {
            Ok(v) => v,
            Err(e) => {
                eprintln!("value evaluation failed: {e}");
                return 2;
            }
        };
        match oracle::suboptimality(v, res.best_value) {
            Ok(s) => println!("consensus value {v:.9e}, suboptimality {s:.6} %"),
            Err(e) => println!("suboptimality undefined: {e}"),
        }
    }
    0
}

fn cmd_doclint(a: DoclintArgs) -> u8 {
    let arch = a.dir.join("architecture.md");
    let dec = a.dir.join("design-decisions.md");
    let exp = a.dir.join("experiments.md");
    let mut failures = Vec::new();

    let operations = [
        "contains",
        "is_empty",
        "support",
        "pontryagin_diff",
        "minkowski_sum",
        "linear_preimage",
        "intersect",
        "set_equal",
        "step",
        "global_value",
        "validate",
        "eval_switching",
        "d_rout",
        "solve_qp",
        "solve_lp",
        "build_local_qp",
        "admm_round",
        "residual",
        "sw_admm",
        "shift_guess",
        "dmpc_step",
        "stable_dmpc_step",
        "simulate",
        "compute_terminal_sets",
        "verify_invariance",
        "verify_terminal_cost",
        "synthesize_terminal_cost",
        "global_optimum",
        "suboptimality",
        "randomized_study",
    ];
    match fs::read_to_string(&arch) {
        Ok(text) => {
            for op in operations {
                if !text.contains(&format!("`{op}`")) {
                    failures.push(format!("architecture.md: operation `{op}` missing"));
                }
            }
        }
        Err(e) => failures.push(format!("{}: {e}", arch.display())),
    }
    match fs::read_to_string(&dec) {
        Ok(text) => {
            let mut ids = Vec::new();
            for line in text.lines() {
                if let Some(rest) = line.strip_prefix("| D") {
                    if let Some(id) = rest.split('|').next() {
                        let id = id.trim().to_string();
                        if !id.is_empty() && id.chars().all(|c| c.is_ascii_digit()) {
                            ids.push(id);
                        }
                    }
                }
            }
            let mut seen = std::collections::BTreeSet::new();
            for id in &ids {
                if !seen.insert(id.clone()) {
                    failures.push(format!("design-decisions.md: duplicate id D{id}"));
                }
            }
            if ids.is_empty() {
                failures.push("design-decisions.md: no decision rows found".into());
            }
        }
        Err(e) => failures.push(format!("{}: {e}", dec.display())),
    }
    match fs::read_to_string(&exp) {
        Ok(text) => {
            for cfg in [
                "weakcoupling.json",
                "strongcoupling.json",
                "quadrant-toy.json",
            ] {
                if !text.contains(cfg) {
                    failures.push(format!("experiments.md: config {cfg} not documented"));
                }
            }
        }
        Err(e) => failures.push(format!("{}: {e}", exp.display())),
    }

    if failures.is_empty() {
        println!("doclint: clean");
        0
    } else {
        for f in &failures {
            eprintln!("doclint: {f}");
        }
        3
    }
}

fn input_error(msg: &str) -> u8 {
    eprintln!("input error: {msg}");
    1
}

fn runtime_error(msg: &str) -> u8 {
    eprintln!("runtime error: {msg}");
    2
}
