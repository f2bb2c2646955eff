//! Terminal ingredients: fixed-point computation of robustly positive
//! invariant terminal sets under switching linear terminal controllers,
//! sampling/LP verification of the invariance property, and verification
//! (plus optional SDP synthesis) of a common quadratic terminal cost over
//! all mode combinations.

use std::collections::BTreeMap;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::PwaNetwork;
use crate::polytope::{HPolytope, PolytopeError, GEOM_TOL};

/// Strict-negativity margin for the terminal-cost eigenvalue check.
pub const EIG_TOL: f64 = 1e-9;

/// Cap on enumerated mode combinations in the terminal-cost check.
pub const MODE_COMBO_CAP: usize = 256;

#[derive(Debug, Error)]
pub enum TerminalError {
    #[error("subsystem {agent}: terminal set became empty at iteration {iter}")]
    EmptySet { agent: usize, iter: usize },
    #[error("no fixed point within {0} iterations")]
    NonConvergence(usize),
    #[error("subsystem {agent}: seed set leaves the admissible region collection at {point:?}")]
    InvalidSeed { agent: usize, point: Vec<f64> },
    #[error("subsystem {agent}: missing gain for mode {mode}")]
    MissingGain { agent: usize, mode: usize },
    #[error("{0} mode combinations exceed the cap {MODE_COMBO_CAP}")]
    ComboCapacity(usize),
    #[error("backend reported {0:?} during terminal-cost synthesis")]
    SynthesisBackend(String),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
}

/// Per-subsystem terminal data: invariant set, per-mode gains for the
/// origin-touching regions, and the quadratic terminal cost weight.
#[derive(Debug, Clone)]
pub struct TerminalIngredients {
    pub set: HPolytope,
    pub gains: BTreeMap<usize, DMatrix<f64>>,
    pub phi: DMatrix<f64>,
}

fn closed_loop(
    net: &PwaNetwork,
    i: usize,
    l: usize,
    gains: &[BTreeMap<usize, DMatrix<f64>>],
) -> Result<DMatrix<f64>, TerminalError> {
    let sub = &net.subsystems[i];
    let k = gains[i]
        .get(&l)
        .ok_or(TerminalError::MissingGain { agent: i, mode: l })?;
    Ok(&sub.modes[l].a + &sub.modes[l].b * k)
}

/// Fixed-point iteration for the terminal sets.
///
/// Starting from the seeds `x0`, each pass erodes every set by the coupling
/// reachable from the neighbors' current sets and pulls it back through the
/// closed-loop maps of all origin-touching modes, intersecting across modes
/// and with the previous set. Stops when every set is unchanged (within
/// `GEOM_TOL`-scaled equality).
pub fn compute_terminal_sets(
    net: &PwaNetwork,
    x0: &[HPolytope],
    gains: &[BTreeMap<usize, DMatrix<f64>>],
    max_iter: usize,
) -> Result<Vec<HPolytope>, TerminalError> {
    let m = net.n_subsystems();
    assert_eq!(x0.len(), m, "one seed set per subsystem");
    assert_eq!(gains.len(), m, "one gain map per subsystem");
    check_seed_sets(net, x0, gains)?;

    let mut prev: Vec<HPolytope> = x0.to_vec();
    for iter in 1..=max_iter {
        let mut next = Vec::with_capacity(m);
        for i in 0..m {
            let sub = &net.subsystems[i];
            let origin_modes = sub.origin_modes();
            let mut acc = prev[i].clone();
            for &l in &origin_modes {
                // disturbance set reachable through this mode's coupling
                let mut w = HPolytope::zero_point(sub.state_dim);
                for (&j, a_ij) in &sub.modes[l].coupling {
                    let image = prev[j].linear_image(a_ij)?;
                    w = w.minkowski_sum(&image)?;
                }
                let eroded = prev[i].pontryagin_diff(&w)?;
                let a_cl = closed_loop(net, i, l, gains)?;
                let pre = eroded.linear_preimage(&a_cl)?;
                acc = acc.intersect(&pre, false)?;
            }
            let acc = acc.prune_redundant()?;
            if acc.is_empty()? {
                return Err(TerminalError::EmptySet { agent: i, iter });
            }
            next.push(acc);
        }
        let mut converged = true;
        for i in 0..m {
            let scale = next[i].offsets().amax().max(1.0);
            if !next[i].set_equal(&prev[i], GEOM_TOL * scale * 10.0)? {
                converged = false;
                break;
            }
        }
        if converged {
            return Ok(next);
        }
        prev = next;
    }
    Err(TerminalError::NonConvergence(max_iter))
}

fn check_seed_sets(
    net: &PwaNetwork,
    x0: &[HPolytope],
    gains: &[BTreeMap<usize, DMatrix<f64>>],
) -> Result<(), TerminalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e57);
    for (i, seed) in x0.iter().enumerate() {
        let sub = &net.subsystems[i];
        if seed.is_empty()? {
            return Err(TerminalError::EmptySet { agent: i, iter: 0 });
        }
        let origin_modes = sub.origin_modes();
        let (lo, hi) = seed.bounding_box()?;
        let mut checked = 0;
        let mut attempts = 0;
        while checked < 100 && attempts < 5000 {
            attempts += 1;
            let x = DVector::from_fn(sub.state_dim, |r, _| rng.gen_range(lo[r]..=hi[r]));
            if !seed.contains(&x, 0.0)? {
                continue;
            }
            checked += 1;
            let admissible = origin_modes.iter().any(|&l| {
                let in_region = sub.modes[l].region.contains(&x, GEOM_TOL).unwrap_or(false);
                let input_ok = gains[i]
                    .get(&l)
                    .map(|k| {
                        let u = k * &x;
                        sub.input_set.contains(&u, GEOM_TOL).unwrap_or(false)
                    })
                    .unwrap_or(false);
                in_region && input_ok
            });
            if !admissible {
                return Err(TerminalError::InvalidSeed {
                    agent: i,
                    point: x.iter().copied().collect(),
                });
            }
        }
    }
    Ok(())
}

/// One invariance violation found by sampling.
#[derive(Debug, Clone)]
pub struct InvarianceViolation {
    pub agent: usize,
    pub mode: usize,
    pub point: DVector<f64>,
    /// Positive slack of the violated condition.
    pub slack: f64,
    pub input_violation: bool,
}

#[derive(Debug, Clone, Default)]
pub struct InvarianceReport {
    pub violations: Vec<InvarianceViolation>,
    pub samples_checked: usize,
    /// Agents verified exactly by facetwise LPs (possible without coupling).
    pub exact_agents: Vec<usize>,
}

impl InvarianceReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check that each set maps into itself under its switching terminal
/// controllers while neighbors range over their own terminal sets.
/// Boundary-biased sampling; agents without neighbors are also checked
/// exactly facet-by-facet.
pub fn verify_invariance(
    net: &PwaNetwork,
    sets: &[HPolytope],
    gains: &[BTreeMap<usize, DMatrix<f64>>],
    samples: usize,
) -> Result<InvarianceReport, TerminalError> {
    let mut report = InvarianceReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x1aea);
    let tol = 1e-7;

    for i in 0..net.n_subsystems() {
        let sub = &net.subsystems[i];
        let origin_modes = sub.origin_modes();

        if net.neighbors[i].is_empty() {
            // exact facetwise check
            report.exact_agents.push(i);
            for &l in &origin_modes {
                let a_cl = closed_loop(net, i, l, gains)?;
                let k = &gains[i][&l];
                for f in 0..sets[i].n_facets() {
                    let dir = (sets[i].facets().row(f) * &a_cl).transpose();
                    let s = sets[i].support(&dir)?;
                    if s > sets[i].offsets()[f] + tol {
                        report.violations.push(InvarianceViolation {
                            agent: i,
                            mode: l,
                            point: DVector::zeros(sub.state_dim),
                            slack: s - sets[i].offsets()[f],
                            input_violation: false,
                        });
                    }
                }
                for f in 0..sub.input_set.n_facets() {
                    let dir = (sub.input_set.facets().row(f) * k).transpose();
                    let s = sets[i].support(&dir)?;
                    if s > sub.input_set.offsets()[f] + tol {
                        report.violations.push(InvarianceViolation {
                            agent: i,
                            mode: l,
                            point: DVector::zeros(sub.state_dim),
                            slack: s - sub.input_set.offsets()[f],
                            input_violation: true,
                        });
                    }
                }
            }
            continue;
        }

        for _ in 0..samples {
            let x = sample_in_polytope(&sets[i], &mut rng, true)?;
            let mut neighbor_states = BTreeMap::new();
            for &j in &net.neighbors[i] {
                neighbor_states.insert(j, sample_in_polytope(&sets[j], &mut rng, true)?);
            }
            report.samples_checked += 1;
            for &l in &origin_modes {
                if !sub.modes[l].region.contains(&x, GEOM_TOL)? {
                    continue;
                }
                let k = gains[i]
                    .get(&l)
                    .ok_or(TerminalError::MissingGain { agent: i, mode: l })?;
                let u = k * &x;
                let u_slack = (sub.input_set.facets() * &u - sub.input_set.offsets()).max();
                if u_slack > tol {
                    report.violations.push(InvarianceViolation {
                        agent: i,
                        mode: l,
                        point: x.clone(),
                        slack: u_slack,
                        input_violation: true,
                    });
                }
                let a_cl = closed_loop(net, i, l, gains)?;
                let mut next = &a_cl * &x;
                for (&j, a_ij) in &sub.modes[l].coupling {
                    next += a_ij * &neighbor_states[&j];
                }
                let slack = (sets[i].facets() * &next - sets[i].offsets()).max();
                if slack > tol {
                    report.violations.push(InvarianceViolation {
                        agent: i,
                        mode: l,
                        point: x.clone(),
                        slack,
                        input_violation: false,
                    });
                }
            }
        }
    }
    Ok(report)
}

/// Rejection-sample a point of `p`; with `boundary_bias`, half the draws
/// are scaled out to the boundary (requires the origin in the interior).
fn sample_in_polytope(
    p: &HPolytope,
    rng: &mut ChaCha8Rng,
    boundary_bias: bool,
) -> Result<DVector<f64>, TerminalError> {
    let (lo, hi) = p.bounding_box()?;
    let d = p.dim();
    for _ in 0..10_000 {
        let x = DVector::from_fn(d, |r, _| rng.gen_range(lo[r]..=hi[r]));
        if !p.contains(&x, 0.0)? {
            continue;
        }
        if boundary_bias && rng.gen_bool(0.5) {
            let ratios = p.facets() * &x;
            let mut t = f64::NEG_INFINITY;
            for k in 0..p.n_facets() {
                if p.offsets()[k] > 0.0 {
                    t = t.max(ratios[k] / p.offsets()[k]);
                }
            }
            if t > 1e-9 {
                return Ok(x / t);
            }
        }
        return Ok(x);
    }
    // extremely thin set: fall back to the analytic center candidate 0
    Ok(DVector::zeros(d))
}

/// Result of the terminal-cost eigenvalue check.
#[derive(Debug, Clone)]
pub struct LyapunovReport {
    /// One `(mode combination, lambda_max)` entry per enumerated combo.
    pub per_mode: Vec<(Vec<usize>, f64)>,
    pub max_lambda: f64,
    pub eig_tol: f64,
    pub pass: bool,
}

fn mode_combinations(net: &PwaNetwork) -> Result<Vec<Vec<usize>>, TerminalError> {
    let per_agent: Vec<Vec<usize>> = net.subsystems.iter().map(|s| s.origin_modes()).collect();
    let total: usize = per_agent.iter().map(|v| v.len().max(1)).product();
    if total > MODE_COMBO_CAP {
        return Err(TerminalError::ComboCapacity(total));
    }
    let mut combos = vec![vec![]];
    for modes in &per_agent {
        let mut next = Vec::with_capacity(combos.len() * modes.len());
        for c in &combos {
            for &l in modes {
                let mut c2 = c.clone();
                c2.push(l);
                next.push(c2);
            }
        }
        combos = next;
    }
    Ok(combos)
}

/// Assemble the global closed-loop matrix for one mode combination.
fn global_closed_loop(
    net: &PwaNetwork,
    combo: &[usize],
    gains: &[BTreeMap<usize, DMatrix<f64>>],
) -> Result<DMatrix<f64>, TerminalError> {
    let dims: Vec<usize> = net.subsystems.iter().map(|s| s.state_dim).collect();
    let n: usize = dims.iter().sum();
    let offsets: Vec<usize> = dims
        .iter()
        .scan(0, |acc, d| {
            let o = *acc;
            *acc += d;
            Some(o)
        })
        .collect();
    let mut a_cl = DMatrix::zeros(n, n);
    for i in 0..net.n_subsystems() {
        let l = combo[i];
        let block = closed_loop(net, i, l, gains)?;
        a_cl.view_mut((offsets[i], offsets[i]), (dims[i], dims[i]))
            .copy_from(&block);
        for (&j, a_ij) in &net.subsystems[i].modes[l].coupling {
            a_cl.view_mut((offsets[i], offsets[j]), (dims[i], dims[j]))
                .copy_from(a_ij);
        }
    }
    Ok(a_cl)
}

fn global_cost_blocks(net: &PwaNetwork) -> (DMatrix<f64>, DMatrix<f64>, Vec<usize>, Vec<usize>) {
    let dims: Vec<usize> = net.subsystems.iter().map(|s| s.state_dim).collect();
    let mdims: Vec<usize> = net.subsystems.iter().map(|s| s.input_dim).collect();
    let n: usize = dims.iter().sum();
    let mt: usize = mdims.iter().sum();
    let xoff: Vec<usize> = dims
        .iter()
        .scan(0, |acc, d| {
            let o = *acc;
            *acc += d;
            Some(o)
        })
        .collect();
    let uoff: Vec<usize> = mdims
        .iter()
        .scan(0, |acc, d| {
            let o = *acc;
            *acc += d;
            Some(o)
        })
        .collect();
    let mut q = DMatrix::zeros(n, n);
    let mut r = DMatrix::zeros(mt, mt);
    for i in 0..net.n_subsystems() {
        let sub = &net.subsystems[i];
        q.view_mut((xoff[i], xoff[i]), (dims[i], dims[i]))
            .copy_from(&sub.state_cost);
        r.view_mut((uoff[i], uoff[i]), (mdims[i], mdims[i]))
            .copy_from(&sub.input_cost);
        // neighbor cost terms land on the neighbor's diagonal block
        for (&j, qij) in &sub.neighbor_costs {
            let mut view = q.view_mut((xoff[j], xoff[j]), (dims[j], dims[j]));
            view += qij;
        }
    }
    (q, r, xoff, uoff)
}

fn symmetric_lambda_max(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    eig.eigenvalues.max()
}

/// Eigenvalue check of the common-Lyapunov condition for all combinations
/// of origin-touching modes. Passes when every lambda_max is below
/// `-EIG_TOL`.
pub fn verify_terminal_cost(
    net: &PwaNetwork,
    phis: &[DMatrix<f64>],
    gains: &[BTreeMap<usize, DMatrix<f64>>],
) -> Result<LyapunovReport, TerminalError> {
    let combos = mode_combinations(net)?;
    let (q, r, xoff, uoff) = global_cost_blocks(net);
    let n = q.nrows();
    let mut phi = DMatrix::zeros(n, n);
    for (i, p) in phis.iter().enumerate() {
        let d = net.subsystems[i].state_dim;
        phi.view_mut((xoff[i], xoff[i]), (d, d)).copy_from(p);
    }
    let mut per_mode = Vec::with_capacity(combos.len());
    let mut max_lambda = f64::NEG_INFINITY;
    for combo in combos {
        let a_cl = global_closed_loop(net, &combo, gains)?;
        let mut k = DMatrix::zeros(r.nrows(), n);
        for i in 0..net.n_subsystems() {
            let ki = gains[i].get(&combo[i]).ok_or(TerminalError::MissingGain {
                agent: i,
                mode: combo[i],
            })?;
            k.view_mut(
                (uoff[i], xoff[i]),
                (net.subsystems[i].input_dim, net.subsystems[i].state_dim),
            )
            .copy_from(ki);
        }
        let m = a_cl.transpose() * &phi * &a_cl - &phi + &q + k.transpose() * &r * &k;
        let lam = symmetric_lambda_max(&m);
        max_lambda = max_lambda.max(lam);
        per_mode.push((combo, lam));
    }
    Ok(LyapunovReport {
        per_mode,
        max_lambda,
        eig_tol: EIG_TOL,
        pass: max_lambda < -EIG_TOL,
    })
}

/// Outcome of the optional terminal-cost synthesis.
#[derive(Debug, Clone)]
pub enum SynthesisResult {
    Feasible(Vec<DMatrix<f64>>),
    NoSolution(String),
}

/// Synthesize block-diagonal terminal cost weights via the PSD-cone
/// backend: find `Phi_i` making the common-Lyapunov condition hold with
/// margin across all mode combinations. Minimizes the total trace to keep
/// the weights small.
pub fn synthesize_terminal_cost(
    net: &PwaNetwork,
    gains: &[BTreeMap<usize, DMatrix<f64>>],
) -> Result<SynthesisResult, TerminalError> {
    let combos = mode_combinations(net)?;
    let (q, r, xoff, uoff) = global_cost_blocks(net);
    let n = q.nrows();
    let margin = 1e-6;
    let pd_floor = 1e-6;

    // variables: packed upper triangles of each Phi_i
    let dims: Vec<usize> = net.subsystems.iter().map(|s| s.state_dim).collect();
    let tri = |d: usize| d * (d + 1) / 2;
    let nvars: usize = dims.iter().map(|&d| tri(d)).sum();
    let mut var_offsets = Vec::with_capacity(dims.len());
    {
        let mut acc = 0;
        for &d in &dims {
            var_offsets.push(acc);
            acc += tri(d);
        }
    }
    // basis matrix (global) for variable v of subsystem i
    let basis = |i: usize, e: usize| -> DMatrix<f64> {
        let d = dims[i];
        let mut idx = 0;
        let mut mat = DMatrix::zeros(n, n);
        for col in 0..d {
            for row in 0..=col {
                if idx == e {
                    mat[(xoff[i] + row, xoff[i] + col)] = 1.0;
                    mat[(xoff[i] + col, xoff[i] + row)] = 1.0;
                    if row == col {
                        mat[(xoff[i] + row, xoff[i] + col)] = 1.0;
                    }
                    return mat;
                }
                idx += 1;
            }
        }
        unreachable!("variable index out of range")
    };

    let svec_len = tri(n);
    let svec = |m: &DMatrix<f64>, out: &mut Vec<f64>| {
        for col in 0..m.ncols() {
            for row in 0..=col {
                if row == col {
                    out.push(m[(row, col)]);
                } else {
                    out.push((m[(row, col)] + m[(col, row)]) * std::f64::consts::FRAC_1_SQRT_2);
                }
            }
        }
    };

    // rows of A (svec-stacked PSD constraints), columns = Phi variables
    let mut a_rows: Vec<Vec<f64>> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();

    for combo in &combos {
        let a_cl = global_closed_loop(net, combo, gains)?;
        let mut k = DMatrix::zeros(r.nrows(), n);
        for i in 0..net.n_subsystems() {
            let ki = gains[i].get(&combo[i]).ok_or(TerminalError::MissingGain {
                agent: i,
                mode: combo[i],
            })?;
            k.view_mut(
                (uoff[i], xoff[i]),
                (net.subsystems[i].input_dim, net.subsystems[i].state_dim),
            )
            .copy_from(ki);
        }
        // constraint: -(Acl' Phi Acl - Phi) - Q - K'RK - margin I >= 0 (PSD)
        let constant = -(&q + k.transpose() * &r * &k + DMatrix::identity(n, n) * margin);
        let mut bvec = Vec::with_capacity(svec_len);
        svec(&constant, &mut bvec);
        // slack s = svec(constant - sum_v phi_v * D_v) with
        // D_v = Acl' E_v Acl - E_v, so A row block = svec(D_v) per column
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(nvars);
        for i in 0..dims.len() {
            for e in 0..tri(dims[i]) {
                let eb = basis(i, e);
                let d_v = a_cl.transpose() * &eb * &a_cl - &eb;
                let mut sv = Vec::with_capacity(svec_len);
                svec(&d_v, &mut sv);
                cols.push(sv);
            }
        }
        for rr in 0..svec_len {
            let mut row = Vec::with_capacity(nvars);
            for col in cols.iter().take(nvars) {
                row.push(col[rr]);
            }
            a_rows.push(row);
            b.push(bvec[rr]);
        }
        cones.push(SupportedConeT::PSDTriangleConeT(n));
    }

    // per-subsystem positive-definiteness: Phi_i - pd_floor*I >= 0
    for i in 0..dims.len() {
        let d = dims[i];
        let local_svec_len = tri(d);
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(nvars);
        for ii in 0..dims.len() {
            for e in 0..tri(dims[ii]) {
                let mut sv = Vec::with_capacity(local_svec_len);
                if ii == i {
                    let eb = basis(ii, e);
                    let local = eb.view((xoff[i], xoff[i]), (d, d)).clone_owned();
                    svec(&(-local), &mut sv);
                } else {
                    sv.resize(local_svec_len, 0.0);
                }
                cols.push(sv);
            }
        }
        let constant = DMatrix::identity(d, d) * (-pd_floor);
        let mut bvec = Vec::with_capacity(local_svec_len);
        svec(&(-constant), &mut bvec);
        for rr in 0..local_svec_len {
            let mut row = Vec::with_capacity(nvars);
            for col in cols.iter().take(nvars) {
                row.push(-col[rr]);
            }
            // s = svec(Phi_i - pd_floor I) = -A phi + b with A = -coeff
            a_rows.push(row.iter().map(|v| -v).collect());
            b.push(bvec[rr]);
        }
        cones.push(SupportedConeT::PSDTriangleConeT(d));
    }

    // objective: minimize the total trace of the Phi blocks
    let mut qobj = vec![0.0; nvars];
    for i in 0..dims.len() {
        let d = dims[i];
        let mut idx = 0;
        for col in 0..d {
            for row in 0..=col {
                if row == col {
                    qobj[var_offsets[i] + idx] = 1.0;
                }
                idx += 1;
            }
        }
    }

    let nrows = a_rows.len();
    let mut dense_a = DMatrix::zeros(nrows, nvars);
    for (rr, row) in a_rows.iter().enumerate() {
        for (cc, v) in row.iter().enumerate() {
            dense_a[(rr, cc)] = *v;
        }
    }
    let a_csc = dense_dmatrix_to_csc(&dense_a);
    let p_csc = CscMatrix::new(nvars, nvars, vec![0; nvars + 1], vec![], vec![]);

    let settings = DefaultSettings {
        verbose: false,
        ..DefaultSettings::default()
    };
    let mut solver = DefaultSolver::new(&p_csc, &qobj, &a_csc, &b, &cones, settings);
    solver.solve();
    match solver.solution.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            let phi_vars = &solver.solution.x;
            let mut phis = Vec::with_capacity(dims.len());
            for i in 0..dims.len() {
                let d = dims[i];
                let mut phi = DMatrix::zeros(d, d);
                let mut idx = 0;
                for col in 0..d {
                    for row in 0..=col {
                        let v = phi_vars[var_offsets[i] + idx];
                        phi[(row, col)] = v;
                        phi[(col, row)] = v;
                        idx += 1;
                    }
                }
                phis.push(phi);
            }
            Ok(SynthesisResult::Feasible(phis))
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => Ok(
            SynthesisResult::NoSolution("no common quadratic terminal cost exists".into()),
        ),
        other => Err(TerminalError::SynthesisBackend(format!("{other:?}"))),
    }
}

fn dense_dmatrix_to_csc(m: &DMatrix<f64>) -> CscMatrix<f64> {
    let (nr, nc) = (m.nrows(), m.ncols());
    let mut colptr = Vec::with_capacity(nc + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for j in 0..nc {
        for i in 0..nr {
            let v = m[(i, j)];
            if v != 0.0 {
                rowval.push(i);
                nzval.push(v);
            }
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(nr, nc, colptr, rowval, nzval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use approx::assert_abs_diff_eq;

    #[test]
    fn scalar_lyapunov_arithmetic() {
        // A_cl = 0.5, K = 0, Q = 1, R = 1: Phi = 2 gives 0.25*2 - 2 + 1 = -0.5
        let net = presets::scalar_single_closed(0.5);
        let gains = vec![presets::zero_gain_map(&net, 0)];
        let phi_pass = vec![DMatrix::from_element(1, 1, 2.0)];
        let rep = verify_terminal_cost(&net, &phi_pass, &gains).unwrap();
        assert!(rep.pass);
        assert_abs_diff_eq!(rep.max_lambda, -0.5, epsilon = 1e-12);

        let phi_fail = vec![DMatrix::from_element(1, 1, 1.0)];
        let rep = verify_terminal_cost(&net, &phi_fail, &gains).unwrap();
        assert!(!rep.pass);
        assert_abs_diff_eq!(rep.max_lambda, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn combo_order_invariance() {
        let net = presets::weak_coupling_network();
        let gains = presets::benchmark_gains(&net);
        let phis = presets::weak_coupling_phis();
        let rep = verify_terminal_cost(&net, &phis, &gains).unwrap();
        // reversing the recorded list does not change the extremes
        let mut lams: Vec<f64> = rep.per_mode.iter().map(|(_, l)| *l).collect();
        let max_fwd = lams.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        lams.reverse();
        let max_rev = lams.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(max_fwd, max_rev);
        assert_eq!(rep.per_mode.len(), 64);
    }

    #[test]
    fn fixed_point_for_contractive_scalar_per_axis() {
        // decoupled, A_cl = 0.5 I, single region: preimage doubles the box,
        // so the unit box is already the fixed point
        let net = presets::diag_closed_loop_2d(0.5);
        let gains = vec![presets::zero_gain_map(&net, 0)];
        let unit = HPolytope::from_box(
            &DVector::from_element(2, -1.0),
            &DVector::from_element(2, 1.0),
        )
        .unwrap();
        let seeds = std::slice::from_ref(&unit);
        let sets = compute_terminal_sets(&net, seeds, &gains, 10).unwrap();
        assert!(sets[0].set_equal(&unit, 1e-7).unwrap());
    }

    #[test]
    fn expanding_dynamics_never_converges() {
        let net = presets::diag_closed_loop_2d(2.0);
        let gains = vec![presets::zero_gain_map(&net, 0)];
        let unit = HPolytope::from_box(
            &DVector::from_element(2, -1.0),
            &DVector::from_element(2, 1.0),
        )
        .unwrap();
        let err = compute_terminal_sets(&net, &[unit], &gains, 8);
        assert!(matches!(err, Err(TerminalError::NonConvergence(_))));
    }

    #[test]
    fn invariance_point_set_at_origin() {
        let net = presets::diag_closed_loop_2d(0.5);
        let gains = vec![presets::zero_gain_map(&net, 0)];
        let zero = HPolytope::zero_point(2);
        let rep = verify_invariance(&net, &[zero], &gains, 100).unwrap();
        assert!(rep.is_clean(), "{:?}", rep.violations);
    }

    #[test]
    fn benchmark_sets_invariant_and_inflated_sets_violate() {
        let net = presets::weak_coupling_network();
        let gains = presets::benchmark_gains(&net);
        let sets: Vec<HPolytope> = (0..3).map(|_| presets::benchmark_terminal_set()).collect();
        let report = verify_invariance(&net, &sets, &gains, 10_000).unwrap();
        assert!(report.is_clean(), "{} violations", report.violations.len());

        // scaling the offsets by 10 breaks invariance
        let inflated: Vec<HPolytope> = sets
            .iter()
            .map(|s| HPolytope::new(s.facets().clone(), s.offsets() * 10.0).unwrap())
            .collect();
        let report = verify_invariance(&net, &inflated, &gains, 2_000).unwrap();
        assert!(
            !report.is_clean(),
            "inflated sets should violate invariance"
        );
    }

    #[test]
    fn synthesis_on_strong_benchmark_passes_verification() {
        let net = presets::strong_coupling_network();
        let gains = presets::benchmark_gains(&net);
        match synthesize_terminal_cost(&net, &gains).unwrap() {
            SynthesisResult::Feasible(phis) => {
                let rep = verify_terminal_cost(&net, &phis, &gains).unwrap();
                assert!(rep.pass, "synthesized weights fail: {}", rep.max_lambda);
            }
            SynthesisResult::NoSolution(msg) => panic!("expected weights: {msg}"),
        }
    }

    #[test]
    fn synthesis_scalar_feasible_and_verified() {
        let net = presets::scalar_single_closed(0.5);
        let gains = vec![presets::zero_gain_map(&net, 0)];
        match synthesize_terminal_cost(&net, &gains).unwrap() {
            SynthesisResult::Feasible(phis) => {
                // any Phi > 4/3 works for this closed loop
                assert!(phis[0][(0, 0)] > 4.0 / 3.0 - 1e-6);
                let rep = verify_terminal_cost(&net, &phis, &gains).unwrap();
                assert!(
                    rep.pass,
                    "synthesized Phi fails verification: {}",
                    rep.max_lambda
                );
            }
            SynthesisResult::NoSolution(msg) => panic!("expected a solution, got: {msg}"),
        }
    }

    #[test]
    fn synthesis_unstabilizable_reports_no_solution() {
        let net = presets::scalar_single_closed(1.5);
        let gains = vec![presets::zero_gain_map(&net, 0)];
        match synthesize_terminal_cost(&net, &gains).unwrap() {
            SynthesisResult::Feasible(phis) => {
                panic!("expanding loop cannot admit a Lyapunov weight: {phis:?}")
            }
            SynthesisResult::NoSolution(_) => {}
        }
    }
}
