//! Network model for coupled piecewise-affine subsystems: per-region affine
//! dynamics with neighbor coupling, quadratic stage costs, local state/input
//! sets, optional coupled linear inequalities and terminal ingredients.
//!
//! Region indices are 0-based throughout. Mode selection at region
//! boundaries picks the lowest region index whose closure contains the
//! state, which keeps simulations deterministic.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::polytope::{HPolytope, PolytopeError, GEOM_TOL};
use crate::terminal::TerminalIngredients;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("subsystem {agent}: {message}")]
    BadSubsystem { agent: usize, message: String },
    #[error("network: {0}")]
    BadNetwork(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("subsystem {agent} state at step {step} lies in no region closure")]
    OutOfPartition { agent: usize, step: usize },
    #[error("subsystem {agent} has no mode {mode}")]
    NoSuchMode { agent: usize, mode: usize },
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
}

/// One affine piece of a subsystem: `x+ = A x + B u + c + sum_j A_ij x_j`
/// valid on `region`.
#[derive(Debug, Clone)]
pub struct PwaMode {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
    /// Coupling matrices keyed by neighbor id; absent keys mean zero.
    pub coupling: BTreeMap<usize, DMatrix<f64>>,
    pub region: HPolytope,
}

/// Coupled linear inequality `G x_i + sum_j G_ij x_j <= g`.
#[derive(Debug, Clone)]
pub struct CoupledInequality {
    pub own: DMatrix<f64>,
    pub neighbors: BTreeMap<usize, DMatrix<f64>>,
    pub rhs: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct Subsystem {
    pub id: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    pub modes: Vec<PwaMode>,
    /// Local state set X.
    pub state_set: HPolytope,
    /// Local input set U.
    pub input_set: HPolytope,
    /// Stage cost weight on the own state (PSD).
    pub state_cost: DMatrix<f64>,
    /// Stage cost weight on the input (PD).
    pub input_cost: DMatrix<f64>,
    /// Stage cost weights on neighbor states, keyed by neighbor id.
    pub neighbor_costs: BTreeMap<usize, DMatrix<f64>>,
    pub coupled_ineq: Option<CoupledInequality>,
    pub terminal: Option<TerminalIngredients>,
}

impl Subsystem {
    /// Lowest-index mode whose region closure contains `x` (within tol).
    pub fn mode_of(&self, x: &DVector<f64>, tol: f64) -> Option<usize> {
        self.modes
            .iter()
            .position(|m| m.region.contains(x, tol).unwrap_or(false))
    }

    /// All modes whose region closures contain `x` (within tol), ascending.
    pub fn modes_containing(&self, x: &DVector<f64>, tol: f64) -> Vec<usize> {
        self.modes
            .iter()
            .enumerate()
            .filter(|(_, m)| m.region.contains(x, tol).unwrap_or(false))
            .map(|(l, _)| l)
            .collect()
    }

    /// Region indices whose closures contain the origin.
    pub fn origin_modes(&self) -> Vec<usize> {
        let zero = DVector::zeros(self.state_dim);
        self.modes_containing(&zero, GEOM_TOL)
    }

    /// Stage cost `x'Qx + u'Ru + sum_j xj'Q_ij xj`.
    pub fn stage_cost(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        neighbor_states: &BTreeMap<usize, DVector<f64>>,
    ) -> f64 {
        let mut cost = (x.transpose() * &self.state_cost * x)[(0, 0)]
            + (u.transpose() * &self.input_cost * u)[(0, 0)];
        for (j, q) in &self.neighbor_costs {
            if let Some(xj) = neighbor_states.get(j) {
                cost += (xj.transpose() * q * xj)[(0, 0)];
            }
        }
        cost
    }

    /// Terminal cost `x'Phi x`, zero when no terminal ingredients are set.
    pub fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        match &self.terminal {
            Some(t) => (x.transpose() * &t.phi * x)[(0, 0)],
            None => 0.0,
        }
    }
}

/// Per-subsystem current states.
pub type GlobalState = Vec<DVector<f64>>;
/// Per-subsystem input sequences `u_i(0..N-1)`.
pub type GlobalInputSeq = Vec<Vec<DVector<f64>>>;

#[derive(Debug, Clone)]
pub struct PwaNetwork {
    pub subsystems: Vec<Subsystem>,
    /// Ordered neighbor lists per subsystem.
    pub neighbors: Vec<Vec<usize>>,
    /// Prediction horizon N.
    pub horizon: usize,
}

impl PwaNetwork {
    pub fn new(
        subsystems: Vec<Subsystem>,
        neighbors: Vec<Vec<usize>>,
        horizon: usize,
    ) -> Result<Self, ModelError> {
        let net = Self {
            subsystems,
            neighbors,
            horizon,
        };
        net.check_structure()?;
        Ok(net)
    }

    pub fn n_subsystems(&self) -> usize {
        self.subsystems.len()
    }

    /// Agents holding copies of `i`'s trajectory (those with `i` in their
    /// neighbor list). Equals `neighbors[i]` on symmetric graphs.
    pub fn holders_of(&self, i: usize) -> Vec<usize> {
        (0..self.n_subsystems())
            .filter(|j| self.neighbors[*j].contains(&i))
            .collect()
    }

    /// Number of directed neighbor relations (trajectory payloads per
    /// exchange round).
    pub fn n_directed_edges(&self) -> usize {
        self.neighbors.iter().map(|n| n.len()).sum()
    }

    fn check_structure(&self) -> Result<(), ModelError> {
        let m = self.subsystems.len();
        if self.neighbors.len() != m {
            return Err(ModelError::BadNetwork(format!(
                "{} neighbor lists for {} subsystems",
                self.neighbors.len(),
                m
            )));
        }
        if self.horizon == 0 {
            return Err(ModelError::BadNetwork("horizon must be positive".into()));
        }
        for (i, sub) in self.subsystems.iter().enumerate() {
            let fail = |message: String| ModelError::BadSubsystem { agent: i, message };
            if sub.id != i {
                return Err(fail(format!("id {} does not match position {i}", sub.id)));
            }
            if sub.modes.is_empty() {
                return Err(fail("no modes".into()));
            }
            if self.neighbors[i].contains(&i) {
                return Err(ModelError::BadNetwork(format!(
                    "subsystem {i} lists itself as a neighbor"
                )));
            }
            for &j in &self.neighbors[i] {
                if j >= m {
                    return Err(ModelError::BadNetwork(format!(
                        "subsystem {i} lists unknown neighbor {j}"
                    )));
                }
            }
            if sub.state_set.dim() != sub.state_dim {
                return Err(fail("state set dimension mismatch".into()));
            }
            if sub.input_set.dim() != sub.input_dim {
                return Err(fail("input set dimension mismatch".into()));
            }
            if sub.state_cost.nrows() != sub.state_dim || sub.state_cost.ncols() != sub.state_dim {
                return Err(fail("Q dimension mismatch".into()));
            }
            if !is_psd(&sub.state_cost, -1e-9) {
                return Err(fail("Q must be symmetric positive semidefinite".into()));
            }
            if sub.input_cost.nrows() != sub.input_dim || sub.input_cost.ncols() != sub.input_dim {
                return Err(fail("R dimension mismatch".into()));
            }
            if !is_psd(&sub.input_cost, 1e-12) {
                return Err(fail("R must be symmetric positive definite".into()));
            }
            for (j, q) in &sub.neighbor_costs {
                if !self.neighbors[i].contains(j) {
                    return Err(fail(format!("cost key {j} not in neighbor list")));
                }
                let nj = self.subsystems[*j].state_dim;
                if q.nrows() != nj || q.ncols() != nj {
                    return Err(fail(format!("Q_ij for neighbor {j} has wrong shape")));
                }
                if !is_psd(q, -1e-9) {
                    return Err(fail(format!(
                        "Q_ij for neighbor {j} must be symmetric positive semidefinite"
                    )));
                }
            }
            for (l, mode) in sub.modes.iter().enumerate() {
                let shape_fail = |what: &str| fail(format!("mode {l}: {what}"));
                if mode.a.nrows() != sub.state_dim || mode.a.ncols() != sub.state_dim {
                    return Err(shape_fail("A shape"));
                }
                if mode.b.nrows() != sub.state_dim || mode.b.ncols() != sub.input_dim {
                    return Err(shape_fail("B shape"));
                }
                if mode.c.len() != sub.state_dim {
                    return Err(shape_fail("c length"));
                }
                if mode.region.dim() != sub.state_dim {
                    return Err(shape_fail("region dimension"));
                }
                for (j, aij) in &mode.coupling {
                    if !self.neighbors[i].contains(j) {
                        return Err(shape_fail(&format!(
                            "coupling key {j} not in neighbor list"
                        )));
                    }
                    let nj = self.subsystems[*j].state_dim;
                    if aij.nrows() != sub.state_dim || aij.ncols() != nj {
                        return Err(shape_fail(&format!("A_ij for neighbor {j} shape")));
                    }
                }
            }
            if let Some(ci) = &sub.coupled_ineq {
                if ci.own.ncols() != sub.state_dim || ci.own.nrows() != ci.rhs.len() {
                    return Err(fail("coupled inequality shape".into()));
                }
                for (j, g) in &ci.neighbors {
                    if !self.neighbors[i].contains(j) {
                        return Err(fail(format!("coupled inequality key {j} not a neighbor")));
                    }
                    if g.nrows() != ci.rhs.len() || g.ncols() != self.subsystems[*j].state_dim {
                        return Err(fail(format!("G_ij for neighbor {j} shape")));
                    }
                }
            }
            if let Some(t) = &sub.terminal {
                if t.set.dim() != sub.state_dim {
                    return Err(fail("terminal set dimension".into()));
                }
                if t.phi.nrows() != sub.state_dim || t.phi.ncols() != sub.state_dim {
                    return Err(fail("terminal cost shape".into()));
                }
                for (l, k) in &t.gains {
                    if *l >= sub.modes.len() {
                        return Err(fail(format!("gain for unknown mode {l}")));
                    }
                    if k.nrows() != sub.input_dim || k.ncols() != sub.state_dim {
                        return Err(fail(format!("gain {l} shape")));
                    }
                }
            }
        }
        Ok(())
    }

    /// One-step update of subsystem `i` from `x_i` under `u_i` with the
    /// given neighbor states. `mode` overrides region lookup when set.
    pub fn step(
        &self,
        i: usize,
        x_i: &DVector<f64>,
        u_i: &DVector<f64>,
        neighbor_states: &BTreeMap<usize, DVector<f64>>,
        mode: Option<usize>,
    ) -> Result<DVector<f64>, ModelError> {
        let sub = &self.subsystems[i];
        if x_i.len() != sub.state_dim || u_i.len() != sub.input_dim {
            return Err(ModelError::Dimension(format!(
                "step inputs for subsystem {i}"
            )));
        }
        let l = match mode {
            Some(l) => {
                if l >= sub.modes.len() {
                    return Err(ModelError::NoSuchMode { agent: i, mode: l });
                }
                l
            }
            None => sub
                .mode_of(x_i, GEOM_TOL)
                .ok_or(ModelError::OutOfPartition { agent: i, step: 0 })?,
        };
        let m = &sub.modes[l];
        let mut next = &m.a * x_i + &m.b * u_i + &m.c;
        for (j, aij) in &m.coupling {
            let xj = neighbor_states.get(j).ok_or_else(|| {
                ModelError::Dimension(format!("missing neighbor state {j} for subsystem {i}"))
            })?;
            next += aij * xj;
        }
        Ok(next)
    }

    /// Roll the true dynamics out over the horizon. Returns per-subsystem
    /// trajectories `x_i(0..=N)`, the accumulated cost, and the largest
    /// constraint violation (state/input sets, coupled inequalities and,
    /// when `check_terminal`, terminal-set membership at N).
    pub fn rollout(
        &self,
        x: &GlobalState,
        u: &GlobalInputSeq,
        check_terminal: bool,
    ) -> Result<RolloutOutcome, ModelError> {
        let m = self.n_subsystems();
        let n = self.horizon;
        if x.len() != m || u.len() != m {
            return Err(ModelError::Dimension("global state/input arity".into()));
        }
        for (i, ui) in u.iter().enumerate() {
            if ui.len() != n {
                return Err(ModelError::Dimension(format!(
                    "subsystem {i} input sequence has length {}, expected {n}",
                    ui.len()
                )));
            }
        }
        let mut trajs: Vec<Vec<DVector<f64>>> = x.iter().map(|xi| vec![xi.clone()]).collect();
        let mut cost = 0.0;
        let mut violation: f64 = 0.0;

        for k in 0..=n {
            // constraint audit at step k
            for i in 0..m {
                let sub = &self.subsystems[i];
                let xi = &trajs[i][k];
                let sx = (sub.state_set.facets() * xi - sub.state_set.offsets()).max();
                violation = violation.max(sx);
                if k < n {
                    let su = (sub.input_set.facets() * &u[i][k] - sub.input_set.offsets()).max();
                    violation = violation.max(su);
                }
                if let Some(ci) = &sub.coupled_ineq {
                    let mut lhs = &ci.own * xi;
                    for (j, g) in &ci.neighbors {
                        lhs += g * &trajs[*j][k];
                    }
                    violation = violation.max((lhs - &ci.rhs).max());
                }
                if k == n && check_terminal {
                    if let Some(t) = &sub.terminal {
                        let st = (t.set.facets() * xi - t.set.offsets()).max();
                        violation = violation.max(st);
                    }
                }
            }
            if k < n {
                // stage costs and synchronous advance
                for i in 0..m {
                    let sub = &self.subsystems[i];
                    let neighbor_states: BTreeMap<usize, DVector<f64>> = self.neighbors[i]
                        .iter()
                        .map(|&j| (j, trajs[j][k].clone()))
                        .collect();
                    cost += sub.stage_cost(&trajs[i][k], &u[i][k], &neighbor_states);
                }
                let mut next_states = Vec::with_capacity(m);
                for i in 0..m {
                    let neighbor_states: BTreeMap<usize, DVector<f64>> = self.neighbors[i]
                        .iter()
                        .map(|&j| (j, trajs[j][k].clone()))
                        .collect();
                    let next = self
                        .step(i, &trajs[i][k], &u[i][k], &neighbor_states, None)
                        .map_err(|e| match e {
                            ModelError::OutOfPartition { agent, .. } => {
                                ModelError::OutOfPartition { agent, step: k }
                            }
                            other => other,
                        })?;
                    next_states.push(next);
                }
                for (i, next) in next_states.into_iter().enumerate() {
                    trajs[i].push(next);
                }
            } else {
                for i in 0..m {
                    cost += self.subsystems[i].terminal_cost(&trajs[i][k]);
                }
            }
        }
        Ok(RolloutOutcome {
            trajectories: trajs,
            cost,
            max_violation: violation,
        })
    }

    /// Value of applying `u` from `x`: the summed stage and terminal costs
    /// along the true rollout when every constraint holds (within
    /// `feas_tol`), `+inf` otherwise. Terminal-set membership at N is part
    /// of the check whenever terminal ingredients are configured.
    pub fn global_value_with(
        &self,
        x: &GlobalState,
        u: &GlobalInputSeq,
        feas_tol: f64,
    ) -> Result<f64, ModelError> {
        let out = self.rollout(x, u, true)?;
        if out.max_violation <= feas_tol {
            Ok(out.cost)
        } else {
            Ok(f64::INFINITY)
        }
    }

    /// [`PwaNetwork::global_value_with`] at the default geometric tolerance.
    pub fn global_value(&self, x: &GlobalState, u: &GlobalInputSeq) -> Result<f64, ModelError> {
        self.global_value_with(x, u, GEOM_TOL)
    }

    /// Sampling-based structural audit: region coverage of X, pairwise
    /// interior overlaps, asymmetric neighbor lists. Deterministic for a
    /// fixed sample count.
    pub fn validate(&self, samples: usize) -> ValidationReport {
        let mut report = ValidationReport::default();
        for i in 0..self.n_subsystems() {
            for &j in &self.neighbors[i] {
                if !self.neighbors[j].contains(&i) {
                    report.asymmetric_neighbors.push((i, j));
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for (i, sub) in self.subsystems.iter().enumerate() {
            let (lo, hi) = match sub.state_set.bounding_box() {
                Ok(b) => b,
                Err(_) => {
                    report.notes.push(format!(
                        "subsystem {i}: state set is unbounded, coverage skipped"
                    ));
                    continue;
                }
            };
            let mut drawn = 0;
            let mut attempts = 0;
            while drawn < samples && attempts < samples * 50 {
                attempts += 1;
                let x = DVector::from_fn(sub.state_dim, |r, _| rng.gen_range(lo[r]..=hi[r]));
                if !sub.state_set.contains(&x, 0.0).unwrap_or(false) {
                    continue;
                }
                drawn += 1;
                let closures = sub.modes_containing(&x, GEOM_TOL);
                if closures.is_empty() {
                    report.coverage_violations.push((i, x.clone()));
                }
                let interiors: Vec<usize> = sub
                    .modes
                    .iter()
                    .enumerate()
                    .filter(|(_, m)| m.region.contains_interior(&x, GEOM_TOL).unwrap_or(false))
                    .map(|(l, _)| l)
                    .collect();
                if interiors.len() >= 2 {
                    report.overlap_violations.push((i, x, interiors));
                }
            }
        }
        report
    }
}

/// Result of rolling true dynamics over the horizon.
#[derive(Debug, Clone)]
pub struct RolloutOutcome {
    pub trajectories: Vec<Vec<DVector<f64>>>,
    pub cost: f64,
    pub max_violation: f64,
}

/// Findings from [`PwaNetwork::validate`]; empty collections mean a clean
/// report.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub coverage_violations: Vec<(usize, DVector<f64>)>,
    pub overlap_violations: Vec<(usize, DVector<f64>, Vec<usize>)>,
    pub asymmetric_neighbors: Vec<(usize, usize)>,
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.coverage_violations.is_empty()
            && self.overlap_violations.is_empty()
            && self.asymmetric_neighbors.is_empty()
    }
}

/// Symmetric with smallest eigenvalue at or above `floor`.
fn is_psd(m: &DMatrix<f64>, floor: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-9 * (1.0 + m.amax()) {
        return false;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.min() >= floor
}

/// The four quadrant cones of the plane, numbered counterclockwise from
/// the (+,+) quadrant. Their union covers the plane, so rollouts never
/// leave the partition even outside the state box.
pub fn quadrant_regions() -> Vec<HPolytope> {
    let mk = |rows: [f64; 4]| {
        HPolytope::new(DMatrix::from_row_slice(2, 2, &rows), DVector::zeros(2))
            .expect("quadrant cone")
    };
    vec![
        mk([-1.0, 0.0, 0.0, -1.0]), // x >= 0, y >= 0
        mk([1.0, 0.0, 0.0, -1.0]),  // x <= 0, y >= 0
        mk([1.0, 0.0, 0.0, 1.0]),   // x <= 0, y <= 0
        mk([-1.0, 0.0, 0.0, 1.0]),  // x >= 0, y <= 0
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use approx::assert_abs_diff_eq;

    fn vec2(x: f64, y: f64) -> DVector<f64> {
        DVector::from_row_slice(&[x, y])
    }

    #[test]
    fn step_matches_hand_product() {
        // first column of the mode-0 A matrix
        let net = presets::weak_coupling_network();
        let mut neighbors = BTreeMap::new();
        neighbors.insert(1, vec2(0.0, 0.0));
        neighbors.insert(2, vec2(0.0, 0.0));
        let next = net
            .step(
                0,
                &vec2(1.0, 0.0),
                &DVector::from_row_slice(&[0.0]),
                &neighbors,
                Some(0),
            )
            .unwrap();
        assert_abs_diff_eq!(next[0], 0.6324, epsilon = 1e-12);
        assert_abs_diff_eq!(next[1], 0.0975, epsilon = 1e-12);
    }

    #[test]
    fn step_equilibrium_at_origin() {
        let net = presets::weak_coupling_network();
        let mut neighbors = BTreeMap::new();
        neighbors.insert(1, vec2(0.0, 0.0));
        neighbors.insert(2, vec2(0.0, 0.0));
        let next = net
            .step(
                0,
                &vec2(0.0, 0.0),
                &DVector::from_row_slice(&[0.0]),
                &neighbors,
                None,
            )
            .unwrap();
        assert_abs_diff_eq!(next.amax(), 0.0);
    }

    #[test]
    fn step_weak_coupling_term() {
        let net = presets::weak_coupling_network();
        let mut neighbors = BTreeMap::new();
        neighbors.insert(1, vec2(1.0, 1.0));
        neighbors.insert(2, vec2(0.0, 0.0));
        let next = net
            .step(
                0,
                &vec2(0.0, 0.0),
                &DVector::from_row_slice(&[0.0]),
                &neighbors,
                Some(0),
            )
            .unwrap();
        assert_abs_diff_eq!(next[0], 2e-3, epsilon = 1e-15);
        assert_abs_diff_eq!(next[1], 2e-3, epsilon = 1e-15);
    }

    #[test]
    fn step_out_of_partition() {
        // strip the (+,+) quadrant so its points belong to no region
        let mut net = presets::quadrant_toy_network(1);
        net.subsystems[0].modes.remove(0);
        let mut neighbors = BTreeMap::new();
        neighbors.insert(1, vec2(0.0, 0.0));
        let err = net.step(
            0,
            &vec2(3.0, 5.0),
            &DVector::from_row_slice(&[0.0]),
            &neighbors,
            None,
        );
        assert!(matches!(err, Err(ModelError::OutOfPartition { .. })));
    }

    #[test]
    fn global_value_zero_at_origin() {
        let net = presets::weak_coupling_network();
        let x = vec![vec2(0.0, 0.0); 3];
        let u = vec![vec![DVector::from_row_slice(&[0.0]); net.horizon]; 3];
        let v = net.global_value(&x, &u).unwrap();
        assert_abs_diff_eq!(v, 0.0);
    }

    #[test]
    fn global_value_infinite_outside_state_set() {
        let net = presets::weak_coupling_network();
        // way outside |x|_inf <= 20
        let x = vec![vec2(25.0, 0.0), vec2(0.0, 0.0), vec2(0.0, 0.0)];
        let u = vec![vec![DVector::from_row_slice(&[0.0]); net.horizon]; 3];
        let v = net.global_value(&x, &u).unwrap();
        assert!(v.is_infinite());
    }

    #[test]
    fn global_value_scalar_hand_rollout() {
        // single subsystem, N = 1, A = 0, B = 1, c = 0, Q = R = Phi = 1:
        // x = 2, u = -1 gives 4 + 1 + 1 = 6
        let net = presets::scalar_single(1.0, 1.0, 1.0);
        let x = vec![DVector::from_row_slice(&[2.0])];
        let u = vec![vec![DVector::from_row_slice(&[-1.0])]];
        let v = net.global_value(&x, &u).unwrap();
        assert_abs_diff_eq!(v, 6.0, epsilon = 1e-12);
    }

    #[test]
    fn validate_quadrant_partition_clean() {
        let net = presets::quadrant_toy_network(3);
        let report = net.validate(200);
        assert!(report.is_clean(), "{report:?}");
    }

    #[test]
    fn validate_detects_coverage_gap() {
        let mut net = presets::quadrant_toy_network(3);
        // keep only two quadrants: half the box is uncovered
        net.subsystems[0].modes.truncate(2);
        let report = net.validate(200);
        assert!(!report.coverage_violations.is_empty());
    }

    #[test]
    fn validate_detects_overlap() {
        let mut net = presets::quadrant_toy_network(3);
        // replace region 1 with all of R^2: overlaps every other interior
        net.subsystems[0].modes[1].region =
            HPolytope::new(DMatrix::zeros(1, 2), DVector::from_element(1, 1.0)).unwrap();
        let report = net.validate(200);
        assert!(!report.overlap_violations.is_empty());
    }

    #[test]
    fn validate_detects_asymmetric_neighbors() {
        let mut net = presets::quadrant_toy_network(3);
        net.neighbors[0] = vec![1];
        net.neighbors[1] = vec![];
        let report = net.validate(10);
        assert_eq!(report.asymmetric_neighbors, vec![(0, 1)]);
    }

    #[test]
    fn indefinite_costs_rejected() {
        let mut net = presets::quadrant_toy_network(2);
        let mut subs = net.subsystems.clone();
        subs[0].state_cost = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let err = PwaNetwork::new(subs, net.neighbors.clone(), net.horizon);
        assert!(matches!(err, Err(ModelError::BadSubsystem { .. })));
        let mut subs = net.subsystems.clone();
        subs[1].input_cost = DMatrix::zeros(1, 1); // PSD but not PD
        let err = PwaNetwork::new(subs, net.neighbors.clone(), net.horizon);
        assert!(matches!(err, Err(ModelError::BadSubsystem { .. })));
        let _ = &mut net;
    }

    #[test]
    fn step_affine_in_fixed_mode() {
        let net = presets::weak_coupling_network();
        let u0 = DVector::from_row_slice(&[0.3]);
        let mk = |s: f64| {
            let mut nb = BTreeMap::new();
            nb.insert(1, vec2(0.5 * s, -0.25 * s));
            nb.insert(2, vec2(0.0, 0.1 * s));
            nb
        };
        let f = |x: &DVector<f64>, u: &DVector<f64>, s: f64| {
            net.step(0, x, u, &mk(s), Some(1)).unwrap()
        };
        let (a, b) = (0.7, 0.3);
        let xa = vec2(1.0, 2.0);
        let xb = vec2(-3.0, 0.5);
        let ua = DVector::from_row_slice(&[1.0]);
        let ub = DVector::from_row_slice(&[-2.0]);
        let lhs = f(&(&xa * a + &xb * b), &(&ua * a + &ub * b), a + b);
        let rhs = f(&xa, &ua, 1.0) * a + f(&xb, &ub, 1.0) * b;
        // c = 0 in this model, so the map is linear
        assert_abs_diff_eq!((lhs - rhs).amax(), 0.0, epsilon = 1e-12);
        let _ = u0;
    }
}
