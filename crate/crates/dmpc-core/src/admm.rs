//! Consensus engine with switching: per-agent local QPs over the
//! sequence-selected convex piece, synchronous neighbor exchange, trajectory
//! averaging, multiplier updates, and the switching loop that lets agents
//! jump between convex pieces until a cut-off iteration freezes them.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::{GlobalInputSeq, GlobalState, PwaNetwork};
use crate::qp::{self, QpBuilder, QpError, QpSettings, QpSpec, QpStatus, VariableLayout};
use crate::switching::{
    eval_switching, RolloutResult, SwitchingError, SwitchingSequence, MAX_BRANCHES,
};

#[derive(Debug, Error)]
pub enum AdmmError {
    #[error("agent {agent}: terminal constraint requested but no terminal ingredients configured")]
    MissingTerminal { agent: usize },
    #[error(
        "agent {agent}: local problem infeasible at iteration {tau} under sequence {seq} \
         (no global switching sequence may combine locally feasible, globally empty pieces)"
    )]
    LocalInfeasible {
        agent: usize,
        tau: usize,
        seq: String,
    },
    #[error("agent {agent}: local solve failed at iteration {tau} with status {status:?}")]
    SolverFailure {
        agent: usize,
        tau: usize,
        status: QpStatus,
    },
    #[error("input guess for agent {agent} has length {got}, expected {expected}")]
    BadGuess {
        agent: usize,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Switching(#[from] SwitchingError),
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// One agent's decision block: own predicted trajectory, local copies of
/// neighbor trajectories, and the input sequence.
#[derive(Debug, Clone)]
pub struct AgentBundle {
    /// Own trajectory `x_i(0..=N)`; entry 0 equals the measured state.
    pub x_traj: Vec<DVector<f64>>,
    /// Copies `x_j^(i)(0..=N)` keyed by neighbor id.
    pub copies: BTreeMap<usize, Vec<DVector<f64>>>,
    /// Inputs `u_i(0..N-1)`.
    pub u_seq: Vec<DVector<f64>>,
}

impl AgentBundle {
    /// Stacked augmented trajectory: own states then copies in the given
    /// neighbor order.
    pub fn xtilde(&self, neighbor_order: &[usize]) -> DVector<f64> {
        let mut parts: Vec<f64> = Vec::new();
        for xk in &self.x_traj {
            parts.extend(xk.iter());
        }
        for j in neighbor_order {
            for xk in &self.copies[j] {
                parts.extend(xk.iter());
            }
        }
        DVector::from_vec(parts)
    }
}

/// Options for the switching consensus procedure.
#[derive(Debug, Clone)]
pub struct AdmmOpts {
    /// Penalty parameter, constant across iterations.
    pub rho: f64,
    /// Iteration budget.
    pub t_admm: usize,
    /// Iterations during which agents may change their switching sequence.
    pub t_cut: usize,
    /// Residual threshold for early termination (requires `early_stop`).
    pub target_residual: Option<f64>,
    /// Allow stopping before `t_admm` once the residual target is met with
    /// no switch in the last round. Disable for fixed-iteration replication.
    pub early_stop: bool,
    /// Boundary tolerance for sequence generation on local solutions.
    /// Wider than the geometric default because interior-point solutions
    /// sit strictly inside active boundaries by roughly the solver gap.
    pub eval_tol: f64,
    pub max_branches: usize,
    /// Enforce the terminal-set constraint on the final predicted state.
    pub terminal_on: bool,
    /// Record a per-agent, per-iteration trace.
    pub record_trace: bool,
    /// Replace hard local state constraints by slacks with this linear
    /// penalty weight. Off by default.
    pub soft_state_penalty: Option<f64>,
}

impl Default for AdmmOpts {
    fn default() -> Self {
        Self {
            rho: 1.0,
            t_admm: 100,
            t_cut: 50,
            target_residual: None,
            early_stop: true,
            eval_tol: 1e-7,
            max_branches: MAX_BRANCHES,
            terminal_on: false,
            record_trace: false,
            soft_state_penalty: None,
        }
    }
}

/// A recorded sequence change.
#[derive(Debug, Clone)]
pub struct SwitchEvent {
    pub tau: usize,
    pub agent: usize,
    pub from: SwitchingSequence,
    pub to: SwitchingSequence,
}

/// Mutable consensus state across iterations.
#[derive(Debug, Clone)]
pub struct AdmmState {
    /// Averaged own trajectories, one per agent.
    pub z: Vec<DVector<f64>>,
    /// Multipliers in the augmented-trajectory layout, one per agent.
    pub lambda: Vec<DVector<f64>>,
    pub rho: f64,
    pub tau: usize,
    pub seqs: Vec<SwitchingSequence>,
    pub switch_log: Vec<SwitchEvent>,
    /// Enforce terminal-set membership in the local problems.
    pub terminal_on: bool,
    /// Soft-constraint weight applied to local state rows, when set.
    pub soft_state_penalty: Option<f64>,
}

impl AdmmState {
    /// Fresh state with zero averages and multipliers.
    pub fn new(net: &PwaNetwork, seqs: Vec<SwitchingSequence>, rho: f64) -> Self {
        let n = net.horizon;
        let z = net
            .subsystems
            .iter()
            .map(|s| DVector::zeros((n + 1) * s.state_dim))
            .collect();
        let lambda = (0..net.n_subsystems())
            .map(|i| DVector::zeros(xtilde_len(net, i)))
            .collect();
        Self {
            z,
            lambda,
            rho,
            tau: 0,
            seqs,
            switch_log: Vec::new(),
            terminal_on: false,
            soft_state_penalty: None,
        }
    }

    /// Augmented average for agent `i`: own `z_i` then neighbors' `z_j`.
    pub fn ztilde(&self, net: &PwaNetwork, i: usize) -> DVector<f64> {
        let mut parts: Vec<f64> = self.z[i].iter().copied().collect();
        for &j in &net.neighbors[i] {
            parts.extend(self.z[j].iter());
        }
        DVector::from_vec(parts)
    }
}

fn xtilde_len(net: &PwaNetwork, i: usize) -> usize {
    let n = net.horizon;
    let own = (n + 1) * net.subsystems[i].state_dim;
    let copies: usize = net.neighbors[i]
        .iter()
        .map(|&j| (n + 1) * net.subsystems[j].state_dim)
        .sum();
    own + copies
}

/// Whether agent `i` takes part in consensus at all. Isolated agents (no
/// neighbors, no copies held of them) solve their piece directly with no
/// penalty or multiplier terms.
fn consensus_active(net: &PwaNetwork, i: usize) -> bool {
    !net.neighbors[i].is_empty() || !net.holders_of(i).is_empty()
}

/// Assemble the local problem for agent `i` under sequence `s_i`: the local
/// cost plus multiplier and proximal terms, over the sequence-selected
/// dynamics, region closures, local sets, coupled inequalities, the initial
/// condition, and (when `terminal_on`) the terminal set.
#[allow(clippy::too_many_arguments)]
pub fn build_local_qp(
    net: &PwaNetwork,
    i: usize,
    s_i: &SwitchingSequence,
    lambda_i: &DVector<f64>,
    ztilde_i: &DVector<f64>,
    rho: f64,
    x_i: &DVector<f64>,
    terminal_on: bool,
) -> Result<QpSpec, AdmmError> {
    build_local_qp_with(net, i, s_i, lambda_i, ztilde_i, rho, x_i, terminal_on, None)
}

/// [`build_local_qp`] with optionally softened local state constraints:
/// each state-set row gains a nonnegative slack penalized linearly.
#[allow(clippy::too_many_arguments)]
pub fn build_local_qp_with(
    net: &PwaNetwork,
    i: usize,
    s_i: &SwitchingSequence,
    lambda_i: &DVector<f64>,
    ztilde_i: &DVector<f64>,
    rho: f64,
    x_i: &DVector<f64>,
    terminal_on: bool,
    soft_state_penalty: Option<f64>,
) -> Result<QpSpec, AdmmError> {
    let sub = &net.subsystems[i];
    let n = net.horizon;
    let nx = sub.state_dim;
    let nu = sub.input_dim;
    debug_assert_eq!(s_i.len(), n + 1);

    let mut layout = VariableLayout::new();
    let x_range = layout.push("x", (n + 1) * nx);
    let mut copy_ranges = BTreeMap::new();
    for &j in &net.neighbors[i] {
        let nj = net.subsystems[j].state_dim;
        copy_ranges.insert(j, layout.push(format!("copy{j}"), (n + 1) * nj));
    }
    let u_range = layout.push("u", n * nu);
    let xtilde_end = u_range.start;
    let n_state_rows = sub.state_set.n_facets();
    let slack_range = soft_state_penalty.map(|_| layout.push("slack", (n + 1) * n_state_rows));

    let mut b = QpBuilder::new(layout);

    let x_at = |k: usize| x_range.start + k * nx..x_range.start + (k + 1) * nx;
    let u_at = |k: usize| u_range.start + k * nu..u_range.start + (k + 1) * nu;
    let copy_at = |j: usize, k: usize| {
        let nj = net.subsystems[j].state_dim;
        let r: &std::ops::Range<usize> = &copy_ranges[&j];
        r.start + k * nj..r.start + (k + 1) * nj
    };

    // local cost: stage terms over the horizon, terminal weight at N
    for k in 0..n {
        b.add_quadratic(x_at(k), &sub.state_cost);
        b.add_quadratic(u_at(k), &sub.input_cost);
        for (&j, qij) in &sub.neighbor_costs {
            b.add_quadratic(copy_at(j, k), qij);
        }
    }
    if let Some(t) = &sub.terminal {
        b.add_quadratic(x_at(n), &t.phi);
    }

    // multiplier and proximal terms over the augmented trajectory
    b.add_linear(0..xtilde_end, lambda_i);
    if rho != 0.0 {
        b.add_proximal(0..xtilde_end, rho, ztilde_i);
    }

    // initial condition
    let eye_x = DMatrix::identity(nx, nx);
    b.add_eq_rows(
        &[(x_at(0), &eye_x)],
        &DVector::from_column_slice(x_i.as_slice()),
    );

    // sequence-selected dynamics
    for k in 0..n {
        let mode = &sub.modes[s_i.at(k)];
        let mut terms: Vec<(std::ops::Range<usize>, &DMatrix<f64>)> = vec![(x_at(k + 1), &eye_x)];
        let neg_a = -&mode.a;
        let neg_b = -&mode.b;
        terms.push((x_at(k), &neg_a));
        terms.push((u_at(k), &neg_b));
        let neg_couplings: Vec<(usize, DMatrix<f64>)> =
            mode.coupling.iter().map(|(&j, a)| (j, -a)).collect();
        for (j, neg_aij) in &neg_couplings {
            terms.push((copy_at(*j, k), neg_aij));
        }
        b.add_eq_rows(&terms, &mode.c);
    }

    // region closures along the sequence
    for k in 0..=n {
        let region = &sub.modes[s_i.at(k)].region;
        if region.n_facets() > 0 {
            b.add_in_rows(&[(x_at(k), region.facets())], region.offsets());
        }
    }

    // local state and input sets; slacks soften the state rows on request
    match (&slack_range, soft_state_penalty) {
        (Some(slacks), Some(weight)) if n_state_rows > 0 => {
            let neg_eye = -DMatrix::<f64>::identity(n_state_rows, n_state_rows);
            for k in 0..=n {
                let s_at = slacks.start + k * n_state_rows..slacks.start + (k + 1) * n_state_rows;
                b.add_in_rows(
                    &[(x_at(k), sub.state_set.facets()), (s_at.clone(), &neg_eye)],
                    sub.state_set.offsets(),
                );
                // slacks stay nonnegative and are penalized linearly
                b.add_in_rows(&[(s_at.clone(), &neg_eye)], &DVector::zeros(n_state_rows));
                b.add_linear(s_at, &DVector::from_element(n_state_rows, weight));
            }
        }
        _ => {
            for k in 0..=n {
                if n_state_rows > 0 {
                    b.add_in_rows(
                        &[(x_at(k), sub.state_set.facets())],
                        sub.state_set.offsets(),
                    );
                }
            }
        }
    }
    for k in 0..n {
        if sub.input_set.n_facets() > 0 {
            b.add_in_rows(
                &[(u_at(k), sub.input_set.facets())],
                sub.input_set.offsets(),
            );
        }
    }

    // coupled inequalities on own state and copies
    if let Some(ci) = &sub.coupled_ineq {
        for k in 0..=n {
            let mut terms: Vec<(std::ops::Range<usize>, &DMatrix<f64>)> = vec![(x_at(k), &ci.own)];
            for (&j, g) in &ci.neighbors {
                terms.push((copy_at(j, k), g));
            }
            b.add_in_rows(&terms, &ci.rhs);
        }
    }

    // terminal set on the final own state
    if terminal_on {
        let t = sub
            .terminal
            .as_ref()
            .ok_or(AdmmError::MissingTerminal { agent: i })?;
        b.add_in_rows(&[(x_at(n), t.set.facets())], t.set.offsets());
    }

    Ok(b.build())
}

fn bundle_from_solution(
    net: &PwaNetwork,
    i: usize,
    x_i: &DVector<f64>,
    z: &DVector<f64>,
) -> AgentBundle {
    let sub = &net.subsystems[i];
    let n = net.horizon;
    let nx = sub.state_dim;
    let mut cursor = 0;
    let mut x_traj = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let xk = DVector::from_iterator(nx, z.rows(cursor, nx).iter().copied());
        x_traj.push(if k == 0 { x_i.clone() } else { xk });
        cursor += nx;
    }
    let mut copies = BTreeMap::new();
    for &j in &net.neighbors[i] {
        let nj = net.subsystems[j].state_dim;
        let mut traj = Vec::with_capacity(n + 1);
        for _ in 0..=n {
            traj.push(DVector::from_iterator(
                nj,
                z.rows(cursor, nj).iter().copied(),
            ));
            cursor += nj;
        }
        copies.insert(j, traj);
    }
    let nu = sub.input_dim;
    let mut u_seq = Vec::with_capacity(n);
    for _ in 0..n {
        u_seq.push(DVector::from_iterator(
            nu,
            z.rows(cursor, nu).iter().copied(),
        ));
        cursor += nu;
    }
    AgentBundle {
        x_traj,
        copies,
        u_seq,
    }
}

/// Local objective `F_i` of a bundle: stage costs with copies standing in
/// for neighbor states, plus the terminal cost.
pub fn local_cost(net: &PwaNetwork, i: usize, bundle: &AgentBundle) -> f64 {
    let sub = &net.subsystems[i];
    let n = net.horizon;
    let mut cost = 0.0;
    for k in 0..n {
        let neighbor_states: BTreeMap<usize, DVector<f64>> = bundle
            .copies
            .iter()
            .map(|(&j, traj)| (j, traj[k].clone()))
            .collect();
        cost += sub.stage_cost(&bundle.x_traj[k], &bundle.u_seq[k], &neighbor_states);
    }
    cost + sub.terminal_cost(&bundle.x_traj[n])
}

/// Summed disagreement between copies and owner trajectories: one Euclidean
/// norm per (holder, owner) pair over the stacked trajectory difference.
pub fn residual(net: &PwaNetwork, bundles: &[AgentBundle]) -> f64 {
    let mut total = 0.0;
    for i in 0..net.n_subsystems() {
        for &j in &net.neighbors[i] {
            let mut sq = 0.0;
            for k in 0..bundles[i].copies[&j].len() {
                let diff = &bundles[i].copies[&j][k] - &bundles[j].x_traj[k];
                sq += diff.norm_squared();
            }
            total += sq.sqrt();
        }
    }
    total
}

/// One synchronous iteration: per-agent local solves, neighbor exchange,
/// averaging in fixed agent-index order, multiplier update. Returns the new
/// bundles and their residual; `state.tau` advances by one.
pub fn admm_round(
    net: &PwaNetwork,
    state: &mut AdmmState,
    x: &GlobalState,
    settings: &QpSettings,
) -> Result<(Vec<AgentBundle>, f64), AdmmError> {
    let m = net.n_subsystems();
    let mut bundles = Vec::with_capacity(m);
    for i in 0..m {
        let active = consensus_active(net, i);
        let rho = if active { state.rho } else { 0.0 };
        let ztilde = state.ztilde(net, i);
        let spec = build_local_qp_with(
            net,
            i,
            &state.seqs[i],
            &state.lambda[i],
            &ztilde,
            rho,
            &x[i],
            state.terminal_on,
            state.soft_state_penalty,
        )?;
        let sol = qp::solve_qp(&spec, settings)?;
        match sol.status {
            QpStatus::Optimal => {}
            QpStatus::Infeasible => {
                return Err(AdmmError::LocalInfeasible {
                    agent: i,
                    tau: state.tau,
                    seq: state.seqs[i].to_string(),
                })
            }
            status => {
                return Err(AdmmError::SolverFailure {
                    agent: i,
                    tau: state.tau,
                    status,
                })
            }
        }
        bundles.push(bundle_from_solution(net, i, &x[i], &sol.z));
    }

    average_trajectories(net, &bundles, &mut state.z);
    update_multipliers(net, &bundles, state);

    state.tau += 1;
    let r = residual(net, &bundles);
    Ok((bundles, r))
}

/// Averaging step: each owner trajectory is replaced by the exact
/// arithmetic mean of the owner and every copy held of it, summed in fixed
/// order (owner first, then holders by ascending agent index) so results
/// are bitwise reproducible.
pub fn average_trajectories(net: &PwaNetwork, bundles: &[AgentBundle], z: &mut [DVector<f64>]) {
    for i in 0..net.n_subsystems() {
        let holders = net.holders_of(i);
        let mut acc = stack_traj(&bundles[i].x_traj);
        for &j in &holders {
            let copy = stack_traj(&bundles[j].copies[&i]);
            acc += copy;
        }
        acc /= (holders.len() + 1) as f64;
        z[i] = acc;
    }
}

/// Multiplier step with the freshly averaged trajectories:
/// `lambda += rho (xtilde - ztilde)`. Isolated agents carry no multiplier.
pub fn update_multipliers(net: &PwaNetwork, bundles: &[AgentBundle], state: &mut AdmmState) {
    for i in 0..net.n_subsystems() {
        if !consensus_active(net, i) {
            continue;
        }
        let xt = bundles[i].xtilde(&net.neighbors[i]);
        let zt = state.ztilde(net, i);
        state.lambda[i] += (xt - zt) * state.rho;
    }
}

fn stack_traj(traj: &[DVector<f64>]) -> DVector<f64> {
    let total: usize = traj.iter().map(|v| v.len()).sum();
    let mut out = DVector::zeros(total);
    let mut cursor = 0;
    for v in traj {
        out.rows_mut(cursor, v.len()).copy_from(v);
        cursor += v.len();
    }
    out
}

/// Per-iteration trace row.
#[derive(Debug, Clone)]
pub struct IterRecord {
    pub tau: usize,
    pub agent: usize,
    pub residual: f64,
    pub objective: f64,
    pub switched: bool,
    pub seq: String,
}

/// Output of the switching consensus procedure.
#[derive(Debug, Clone)]
pub struct SwAdmmOutput {
    pub bundles: Vec<AgentBundle>,
    pub residual: f64,
    pub switch_log: Vec<SwitchEvent>,
    pub iterations: usize,
    /// Trajectory payloads exchanged (one per directed neighbor relation
    /// per iteration).
    pub messages: usize,
    pub trace: Vec<IterRecord>,
    pub final_seqs: Vec<SwitchingSequence>,
}

/// Solve the distributed problem by switching consensus iterations.
///
/// Initial sequences come from the branch rollout on the guesses and the
/// rollout copies; during the first `t_cut` iterations an agent whose local
/// solution generates a sequence other than its current one switches to the
/// first such sequence. Terminates at the iteration budget, or earlier when
/// the residual target is met with no switch in the final round.
pub fn sw_admm(
    net: &PwaNetwork,
    x: &GlobalState,
    guesses: &GlobalInputSeq,
    rollout: &[RolloutResult],
    opts: &AdmmOpts,
    settings: &QpSettings,
) -> Result<SwAdmmOutput, AdmmError> {
    let mut seqs = Vec::with_capacity(net.n_subsystems());
    for i in 0..net.n_subsystems() {
        if guesses[i].len() != net.horizon {
            return Err(AdmmError::BadGuess {
                agent: i,
                expected: net.horizon,
                got: guesses[i].len(),
            });
        }
        let cand = eval_switching(
            &net.subsystems[i],
            &x[i],
            &guesses[i],
            &rollout[i].bundle.copies,
            opts.eval_tol,
            opts.max_branches,
        )?;
        seqs.push(cand.into_iter().next().expect("at least one sequence"));
    }
    run_admm(net, x, seqs, rollout, opts, settings)
}

/// Consensus iterations with caller-chosen initial sequences; switching is
/// still governed by `opts.t_cut` (pass 0 to freeze throughout).
pub fn admm_with_sequences(
    net: &PwaNetwork,
    x: &GlobalState,
    seqs: Vec<SwitchingSequence>,
    rollout: &[RolloutResult],
    opts: &AdmmOpts,
    settings: &QpSettings,
) -> Result<SwAdmmOutput, AdmmError> {
    run_admm(net, x, seqs, rollout, opts, settings)
}

fn run_admm(
    net: &PwaNetwork,
    x: &GlobalState,
    seqs: Vec<SwitchingSequence>,
    rollout: &[RolloutResult],
    opts: &AdmmOpts,
    settings: &QpSettings,
) -> Result<SwAdmmOutput, AdmmError> {
    let m = net.n_subsystems();
    let mut state = AdmmState::new(net, seqs, opts.rho);
    state.terminal_on = opts.terminal_on;
    state.soft_state_penalty = opts.soft_state_penalty;

    let mut bundles: Vec<AgentBundle> = rollout.iter().map(|r| r.bundle.clone()).collect();
    let mut last_residual = residual(net, &bundles);
    let mut trace = Vec::new();
    let mut iterations = 0;

    for tau in 0..opts.t_admm {
        let (new_bundles, r) = admm_round(net, &mut state, x, settings)?;
        bundles = new_bundles;
        last_residual = r;
        iterations += 1;

        let mut switched = vec![false; m];
        if tau < opts.t_cut {
            for i in 0..m {
                let cand = eval_switching(
                    &net.subsystems[i],
                    &x[i],
                    &bundles[i].u_seq,
                    &bundles[i].copies,
                    opts.eval_tol,
                    opts.max_branches,
                )?;
                if let Some(next) = cand.into_iter().find(|s| *s != state.seqs[i]) {
                    state.switch_log.push(SwitchEvent {
                        tau,
                        agent: i,
                        from: state.seqs[i].clone(),
                        to: next.clone(),
                    });
                    state.seqs[i] = next;
                    switched[i] = true;
                }
            }
        }
        if opts.record_trace {
            for i in 0..m {
                trace.push(IterRecord {
                    tau,
                    agent: i,
                    residual: r,
                    objective: local_cost(net, i, &bundles[i]),
                    switched: switched[i],
                    seq: state.seqs[i].to_string(),
                });
            }
        }
        let switched_any = switched.iter().any(|s| *s);
        if opts.early_stop {
            if let Some(target) = opts.target_residual {
                if r <= target && !switched_any {
                    break;
                }
            }
        }
    }

    Ok(SwAdmmOutput {
        bundles,
        residual: last_residual,
        switch_log: state.switch_log,
        iterations,
        messages: iterations * net.n_directed_edges(),
        trace,
        final_seqs: state.seqs,
    })
}
