//! Switching-sequence machinery: per-agent branch rollout that enumerates
//! every region sequence generated by an input guess, and the synchronous
//! message-passing rollout that seeds the consensus iterations with
//! trajectories, neighbor copies and rollout costs.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DVector;
use thiserror::Error;

use crate::admm::AgentBundle;
use crate::model::{GlobalInputSeq, GlobalState, ModelError, PwaNetwork, Subsystem};
use crate::polytope::GEOM_TOL;

/// Default cap on rollout branches per agent.
pub const MAX_BRANCHES: usize = 256;

#[derive(Debug, Error)]
pub enum SwitchingError {
    #[error("agent {agent}: state at step {step} lies in no region closure")]
    OutOfPartition { agent: usize, step: usize },
    #[error("agent {agent}: branch count exceeded the cap {cap}")]
    BranchCapacity { agent: usize, cap: usize },
    #[error("agent {agent}: {expected} inputs required, got {got}")]
    BadInputLength {
        agent: usize,
        expected: usize,
        got: usize,
    },
    #[error("agent {agent}: copies missing for neighbor {neighbor}")]
    MissingCopies { agent: usize, neighbor: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Region index per prediction step, length `N + 1`. Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SwitchingSequence {
    indices: Vec<usize>,
}

impl SwitchingSequence {
    pub fn new(indices: Vec<usize>) -> Self {
        Self { indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn at(&self, k: usize) -> usize {
        self.indices[k]
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

impl fmt::Display for SwitchingSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.indices.iter().map(|l| l.to_string()).collect();
        write!(f, "{}", parts.join("-"))
    }
}

/// Enumerate all switching sequences generated by rolling out `inputs`
/// from `x0` with the given neighbor copies. The rollout branches whenever
/// the current state lies in more than one region closure (within `tol`);
/// each branch advances under its own chosen region's dynamics. Sequences
/// come back in branch-creation order with the lowest region index first.
pub fn eval_switching(
    sub: &Subsystem,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    copies: &BTreeMap<usize, Vec<DVector<f64>>>,
    tol: f64,
    max_branches: usize,
) -> Result<Vec<SwitchingSequence>, SwitchingError> {
    let n = inputs.len();
    for (j, traj) in copies {
        if traj.len() < n {
            return Err(SwitchingError::BadInputLength {
                agent: sub.id,
                expected: n,
                got: traj.len(),
            });
        }
        let _ = j;
    }

    struct Branch {
        seq: Vec<usize>,
        state: DVector<f64>,
    }
    let mut branches = vec![Branch {
        seq: Vec::with_capacity(n + 1),
        state: x0.clone(),
    }];

    for k in 0..=n {
        let mut spawned: Vec<Branch> = Vec::new();
        for b in branches.iter_mut() {
            let containing = sub.modes_containing(&b.state, tol);
            if containing.is_empty() {
                return Err(SwitchingError::OutOfPartition {
                    agent: sub.id,
                    step: k,
                });
            }
            let mut first = true;
            let frozen_state = b.state.clone();
            for &l in &containing {
                if first {
                    first = false;
                    b.seq.push(l);
                    if k < n {
                        b.state = advance(sub, &frozen_state, &inputs[k], copies, k, l)?;
                    }
                } else {
                    let mut seq = b.seq.clone();
                    *seq.last_mut().expect("pushed above") = l;
                    let state = if k < n {
                        advance(sub, &frozen_state, &inputs[k], copies, k, l)?
                    } else {
                        frozen_state.clone()
                    };
                    spawned.push(Branch { seq, state });
                }
            }
        }
        branches.extend(spawned);
        if branches.len() > max_branches {
            return Err(SwitchingError::BranchCapacity {
                agent: sub.id,
                cap: max_branches,
            });
        }
    }
    Ok(branches
        .into_iter()
        .map(|b| SwitchingSequence::new(b.seq))
        .collect())
}

fn advance(
    sub: &Subsystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    copies: &BTreeMap<usize, Vec<DVector<f64>>>,
    k: usize,
    mode: usize,
) -> Result<DVector<f64>, SwitchingError> {
    let m = &sub.modes[mode];
    let mut next = &m.a * x + &m.b * u + &m.c;
    for (j, a_ij) in &m.coupling {
        let traj = copies.get(j).ok_or(SwitchingError::MissingCopies {
            agent: sub.id,
            neighbor: *j,
        })?;
        next += a_ij * &traj[k];
    }
    Ok(next)
}

/// Output of the message-passing rollout for one agent: the bundle holds
/// the own trajectory, exact neighbor copies, and the input guess; `cost`
/// is the accumulated stage plus terminal cost of the rollout.
#[derive(Debug, Clone)]
pub struct RolloutResult {
    pub bundle: AgentBundle,
    pub cost: f64,
}

/// Synchronous-round rollout under the input guesses: at every step each
/// agent records its state, exchanges states with neighbors, accumulates
/// its stage cost (terminal cost at the final step), and advances through
/// the true dynamics. Copies equal true neighbor trajectories exactly.
pub fn d_rout(
    net: &PwaNetwork,
    x: &GlobalState,
    guesses: &GlobalInputSeq,
) -> Result<Vec<RolloutResult>, SwitchingError> {
    let m = net.n_subsystems();
    let n = net.horizon;
    for (i, g) in guesses.iter().enumerate() {
        if g.len() != n {
            return Err(SwitchingError::BadInputLength {
                agent: i,
                expected: n,
                got: g.len(),
            });
        }
    }

    let mut states: Vec<DVector<f64>> = x.clone();
    let mut trajs: Vec<Vec<DVector<f64>>> = vec![Vec::with_capacity(n + 1); m];
    let mut copies: Vec<BTreeMap<usize, Vec<DVector<f64>>>> = (0..m)
        .map(|i| {
            net.neighbors[i]
                .iter()
                .map(|&j| (j, Vec::with_capacity(n + 1)))
                .collect()
        })
        .collect();
    let mut costs = vec![0.0; m];

    for k in 0..=n {
        // record and exchange
        for i in 0..m {
            trajs[i].push(states[i].clone());
        }
        for i in 0..m {
            for &j in &net.neighbors[i] {
                let xj = states[j].clone();
                copies[i].get_mut(&j).expect("initialized above").push(xj);
            }
        }
        if k < n {
            let mut next = Vec::with_capacity(m);
            for i in 0..m {
                let sub = &net.subsystems[i];
                let neighbor_states: BTreeMap<usize, DVector<f64>> = net.neighbors[i]
                    .iter()
                    .map(|&j| (j, states[j].clone()))
                    .collect();
                costs[i] += sub.stage_cost(&states[i], &guesses[i][k], &neighbor_states);
                let stepped = net
                    .step(i, &states[i], &guesses[i][k], &neighbor_states, None)
                    .map_err(|e| match e {
                        ModelError::OutOfPartition { agent, .. } => {
                            SwitchingError::OutOfPartition { agent, step: k }
                        }
                        other => SwitchingError::Model(other),
                    })?;
                next.push(stepped);
            }
            states = next;
        } else {
            for i in 0..m {
                costs[i] += net.subsystems[i].terminal_cost(&states[i]);
            }
        }
    }

    Ok((0..m)
        .map(|i| RolloutResult {
            bundle: AgentBundle {
                x_traj: trajs[i].clone(),
                copies: copies[i].clone(),
                u_seq: guesses[i].clone(),
            },
            cost: costs[i],
        })
        .collect())
}

/// Shared default boundary tolerance for sequence generation.
pub fn default_eval_tol() -> f64 {
    GEOM_TOL
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::quadrant_regions;
    use crate::model::{PwaMode, Subsystem};
    use crate::polytope::HPolytope;
    use crate::presets;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn vec2(x: f64, y: f64) -> DVector<f64> {
        DVector::from_row_slice(&[x, y])
    }

    /// Planar subsystem with quadrant regions and `x+ = A x` dynamics.
    fn quadrant_sub(a: DMatrix<f64>) -> Subsystem {
        let modes = quadrant_regions()
            .into_iter()
            .map(|region| PwaMode {
                a: a.clone(),
                b: DMatrix::zeros(2, 1),
                c: DVector::zeros(2),
                coupling: BTreeMap::new(),
                region,
            })
            .collect();
        Subsystem {
            id: 0,
            state_dim: 2,
            input_dim: 1,
            modes,
            state_set: HPolytope::from_box(
                &DVector::from_element(2, -10.0),
                &DVector::from_element(2, 10.0),
            )
            .unwrap(),
            input_set: HPolytope::from_box(
                &DVector::from_element(1, -1.0),
                &DVector::from_element(1, 1.0),
            )
            .unwrap(),
            state_cost: DMatrix::identity(2, 2),
            input_cost: DMatrix::identity(1, 1),
            neighbor_costs: BTreeMap::new(),
            coupled_ineq: None,
            terminal: None,
        }
    }

    #[test]
    fn interior_fixed_point_single_sequence() {
        let sub = quadrant_sub(DMatrix::identity(2, 2));
        let u = vec![DVector::zeros(1); 2];
        let seqs = eval_switching(&sub, &vec2(1.0, 1.0), &u, &BTreeMap::new(), 1e-9, 256).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].indices(), &[0, 0, 0]);
    }

    #[test]
    fn boundary_start_branches_everywhere() {
        // x = (0, 1) sits on the closure of quadrants 0 and 1; identity
        // dynamics keep it there, so every combination appears
        let sub = quadrant_sub(DMatrix::identity(2, 2));
        let u = vec![DVector::zeros(1); 1];
        let seqs = eval_switching(&sub, &vec2(0.0, 1.0), &u, &BTreeMap::new(), 1e-9, 256).unwrap();
        let got: Vec<&[usize]> = seqs.iter().map(|s| s.indices()).collect();
        assert_eq!(
            got,
            vec![&[0, 0][..], &[1, 0][..], &[0, 1][..], &[1, 1][..]]
        );
    }

    #[test]
    fn sign_flip_crosses_quadrants() {
        let sub = quadrant_sub(DMatrix::identity(2, 2) * -1.0);
        let u = vec![DVector::zeros(1); 1];
        let seqs = eval_switching(&sub, &vec2(1.0, 1.0), &u, &BTreeMap::new(), 1e-9, 256).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].indices(), &[0, 2]);
    }

    #[test]
    fn branch_cap_is_enforced() {
        let sub = quadrant_sub(DMatrix::identity(2, 2));
        let u = vec![DVector::zeros(1); 4];
        // origin lies in all four closures at every step
        let err = eval_switching(&sub, &vec2(0.0, 0.0), &u, &BTreeMap::new(), 1e-9, 16);
        assert!(matches!(err, Err(SwitchingError::BranchCapacity { .. })));
    }

    #[test]
    fn generated_sequences_replay_within_closures() {
        let sub = quadrant_sub(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
        let u = vec![DVector::zeros(1); 3];
        let x0 = vec2(2.0, 0.0); // boundary of quadrants 0 and 3
        let seqs = eval_switching(&sub, &x0, &u, &BTreeMap::new(), 1e-9, 256).unwrap();
        assert!(seqs.len() > 1);
        for s in &seqs {
            let mut x = x0.clone();
            for k in 0..=3usize {
                assert!(
                    sub.modes[s.at(k)].region.contains(&x, 1e-9).unwrap(),
                    "sequence {s} leaves region {} at step {k}",
                    s.at(k)
                );
                if k < 3 {
                    let m = &sub.modes[s.at(k)];
                    x = &m.a * &x;
                }
            }
        }
    }

    #[test]
    fn d_rout_zero_everything() {
        let net = presets::quadrant_toy_network(3);
        let x = vec![vec2(0.0, 0.0); 2];
        let guesses = vec![vec![DVector::zeros(1); 3]; 2];
        let out = d_rout(&net, &x, &guesses).unwrap();
        for r in &out {
            assert_abs_diff_eq!(r.cost, 0.0);
            for xk in &r.bundle.x_traj {
                assert_abs_diff_eq!(xk.amax(), 0.0);
            }
        }
    }

    #[test]
    fn d_rout_hand_accumulation() {
        // A = 0, B = 1 wired through scalar_single: from x0 under zero
        // input the only nonzero term is the first stage cost q*x0^2
        let net = presets::scalar_single(3.0, 1.0, 7.0);
        let x = vec![DVector::from_element(1, 2.0)];
        let guesses = vec![vec![DVector::zeros(1)]];
        let out = d_rout(&net, &x, &guesses).unwrap();
        assert_abs_diff_eq!(out[0].cost, 12.0, epsilon = 1e-12);
    }

    #[test]
    fn d_rout_copies_match_owners_bitwise() {
        let net = presets::quadrant_toy_network(4);
        let x = vec![vec2(3.0, -2.0), vec2(-1.0, 4.0)];
        let guesses = vec![
            vec![DVector::from_element(1, 0.5); 4],
            vec![DVector::from_element(1, -0.25); 4],
        ];
        let out = d_rout(&net, &x, &guesses).unwrap();
        for i in 0..2 {
            for (&j, copy) in &out[i].bundle.copies {
                for k in 0..copy.len() {
                    assert_eq!(copy[k], out[j].bundle.x_traj[k], "copy mismatch at {k}");
                }
            }
        }
    }

    #[test]
    fn d_rout_cost_sum_matches_rollout() {
        let net = presets::quadrant_toy_network(4);
        let x = vec![vec2(5.0, 1.0), vec2(-2.0, -3.0)];
        let guesses = vec![
            vec![DVector::from_element(1, 0.3); 4],
            vec![DVector::from_element(1, -0.6); 4],
        ];
        let out = d_rout(&net, &x, &guesses).unwrap();
        let sum: f64 = out.iter().map(|r| r.cost).sum();
        let rollout = net.rollout(&x, &guesses, false).unwrap();
        let rel = (sum - rollout.cost).abs() / rollout.cost.max(1.0);
        assert!(
            rel < 1e-9,
            "rollout cost mismatch: {sum} vs {}",
            rollout.cost
        );
    }
}
