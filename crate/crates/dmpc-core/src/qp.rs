//! Solver-agnostic convex QP/LP layer.
//!
//! Problems are stated densely as
//!
//! ```text
//!   minimize    1/2 z' P z + q' z + r0
//!   subject to  A_eq z  = b_eq
//!               A_in z <= b_in
//! ```
//!
//! and handed to a backend for solution. The default backend is Clarabel,
//! an interior-point conic solver; equalities map to the zero cone and
//! inequalities to the nonnegative orthant. Backends are constructed per
//! solve, so concurrent solves never share state.

use std::collections::BTreeMap;
use std::ops::Range;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Errors surfaced by the QP/LP layer.
#[derive(Debug, Error)]
pub enum QpError {
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("quadratic term is not symmetric (max asymmetry {0:.3e})")]
    Asymmetric(f64),
    #[error("solver failure: {0}")]
    Backend(String),
}

/// Named, disjoint index ranges covering the decision vector.
#[derive(Debug, Clone, Default)]
pub struct VariableLayout {
    blocks: Vec<(String, Range<usize>)>,
}

impl VariableLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a block of `len` variables, returning its index range.
    pub fn push(&mut self, name: impl Into<String>, len: usize) -> Range<usize> {
        let start = self.total();
        let range = start..start + len;
        self.blocks.push((name.into(), range.clone()));
        range
    }

    pub fn total(&self) -> usize {
        self.blocks.last().map_or(0, |(_, r)| r.end)
    }

    pub fn range(&self, name: &str) -> Option<Range<usize>> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| r.clone())
    }

    pub fn blocks(&self) -> &[(String, Range<usize>)] {
        &self.blocks
    }

    /// Blocks must be disjoint and must cover `0..n` without gaps.
    pub fn check_covers(&self, n: usize) -> Result<(), QpError> {
        let mut cursor = 0;
        for (name, r) in &self.blocks {
            if r.start != cursor {
                return Err(QpError::Malformed(format!(
                    "layout block `{name}` starts at {} but previous block ends at {cursor}",
                    r.start
                )));
            }
            cursor = r.end;
        }
        if cursor != n {
            return Err(QpError::Malformed(format!(
                "layout covers {cursor} variables, problem has {n}"
            )));
        }
        Ok(())
    }
}

/// A standard-form convex QP.
#[derive(Debug, Clone)]
pub struct QpSpec {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub r0: f64,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub layout: VariableLayout,
}

impl QpSpec {
    /// Zero-objective spec over `n` variables with a single unnamed block.
    pub fn zero(n: usize) -> Self {
        let mut layout = VariableLayout::new();
        layout.push("z", n);
        Self {
            p: DMatrix::zeros(n, n),
            q: DVector::zeros(n),
            r0: 0.0,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            layout,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.q.len()
    }

    /// Dimension and symmetry checks; cheap enough to run before every solve.
    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.n_vars();
        if self.p.nrows() != n || self.p.ncols() != n {
            return Err(QpError::Malformed(format!(
                "P is {}x{}, expected {n}x{n}",
                self.p.nrows(),
                self.p.ncols()
            )));
        }
        let mut asym: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                asym = asym.max((self.p[(i, j)] - self.p[(j, i)]).abs());
            }
        }
        if asym > 1e-12 {
            return Err(QpError::Asymmetric(asym));
        }
        if self.a_eq.nrows() > 0 && self.a_eq.ncols() != n {
            return Err(QpError::Malformed("A_eq column count mismatch".into()));
        }
        if self.a_in.nrows() > 0 && self.a_in.ncols() != n {
            return Err(QpError::Malformed("A_in column count mismatch".into()));
        }
        if self.a_eq.nrows() != self.b_eq.len() || self.a_in.nrows() != self.b_in.len() {
            return Err(QpError::Malformed("constraint rhs length mismatch".into()));
        }
        for v in self
            .p
            .iter()
            .chain(self.q.iter())
            .chain(self.a_eq.iter())
            .chain(self.b_eq.iter())
            .chain(self.a_in.iter())
            .chain(self.b_in.iter())
        {
            if !v.is_finite() {
                return Err(QpError::Malformed(
                    "non-finite entry in problem data".into(),
                ));
            }
        }
        self.layout.check_covers(n)
    }
}

/// Termination status of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
    NumericalFailure,
}

/// Opaque per-solve diagnostics.
#[derive(Debug, Clone, Default)]
pub struct SolverStats {
    pub iterations: u32,
    pub solve_time: f64,
    pub r_prim: f64,
    pub r_dual: f64,
    pub reduced_accuracy: bool,
    /// Dual variables for the stacked (equality, inequality) rows, when the
    /// backend exposes them.
    pub duals: Option<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub stats: SolverStats,
}

/// Backend tolerances. Defaults: feasibility 1e-8, duality gap 1e-8.
#[derive(Debug, Clone)]
pub struct QpSettings {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            max_iter: 200,
            verbose: false,
        }
    }
}

fn dense_to_csc(m: &DMatrix<f64>, upper_only: bool) -> CscMatrix<f64> {
    let (nr, nc) = (m.nrows(), m.ncols());
    let mut colptr = Vec::with_capacity(nc + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for j in 0..nc {
        let rmax = if upper_only { (j + 1).min(nr) } else { nr };
        for i in 0..rmax {
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

fn map_status(s: SolverStatus) -> (QpStatus, bool) {
    match s {
        SolverStatus::Solved => (QpStatus::Optimal, false),
        SolverStatus::AlmostSolved => (QpStatus::Optimal, true),
        SolverStatus::PrimalInfeasible => (QpStatus::Infeasible, false),
        SolverStatus::AlmostPrimalInfeasible => (QpStatus::Infeasible, true),
        SolverStatus::DualInfeasible => (QpStatus::Unbounded, false),
        SolverStatus::AlmostDualInfeasible => (QpStatus::Unbounded, true),
        SolverStatus::MaxIterations | SolverStatus::MaxTime => (QpStatus::MaxIter, false),
        _ => (QpStatus::NumericalFailure, false),
    }
}

/// Solve a QP with the built-in Clarabel backend.
///
/// A fresh solver instance is constructed per call; the routine is safe to
/// invoke concurrently. Never panics on well-formed input.
pub fn solve_qp(spec: &QpSpec, settings: &QpSettings) -> Result<QpSolution, QpError> {
    spec.validate()?;
    let n = spec.n_vars();
    let neq = spec.a_eq.nrows();
    let nin = spec.a_in.nrows();

    let mut a = DMatrix::zeros(neq + nin, n);
    a.view_mut((0, 0), (neq, n)).copy_from(&spec.a_eq);
    a.view_mut((neq, 0), (nin, n)).copy_from(&spec.a_in);
    let mut b = Vec::with_capacity(neq + nin);
    b.extend(spec.b_eq.iter());
    b.extend(spec.b_in.iter());

    let p_csc = dense_to_csc(&spec.p, true);
    let a_csc = dense_to_csc(&a, false);
    let q: Vec<f64> = spec.q.iter().copied().collect();

    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    if neq > 0 {
        cones.push(SupportedConeT::ZeroConeT(neq));
    }
    if nin > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(nin));
    }

    let cl_settings = DefaultSettings {
        verbose: settings.verbose,
        max_iter: settings.max_iter,
        tol_feas: settings.feas_tol,
        tol_gap_abs: settings.gap_tol,
        tol_gap_rel: settings.gap_tol,
        ..DefaultSettings::default()
    };

    let mut solver = DefaultSolver::new(&p_csc, &q, &a_csc, &b, &cones, cl_settings);
    solver.solve();
    let sol = &solver.solution;
    let (status, reduced) = map_status(sol.status);

    let z = DVector::from_iterator(n, sol.x.iter().copied());
    let objective = if status == QpStatus::Optimal {
        // recompute from the primal point rather than trusting the scaled
        // internal objective
        0.5 * (&z.transpose() * &spec.p * &z)[(0, 0)] + spec.q.dot(&z) + spec.r0
    } else {
        f64::NAN
    };
    let stats = SolverStats {
        iterations: sol.iterations,
        solve_time: sol.solve_time,
        r_prim: sol.r_prim,
        r_dual: sol.r_dual,
        reduced_accuracy: reduced,
        duals: Some(DVector::from_iterator(neq + nin, sol.z.iter().copied())),
    };
    Ok(QpSolution {
        z,
        objective,
        status,
        stats,
    })
}

/// Linear-program convenience wrapper: minimize `c' x` subject to
/// `A_in x <= b_in` and optionally `A_eq x = b_eq`.
pub fn solve_lp(
    c: &DVector<f64>,
    a_in: &DMatrix<f64>,
    b_in: &DVector<f64>,
    a_eq: Option<(&DMatrix<f64>, &DVector<f64>)>,
    settings: &QpSettings,
) -> Result<QpSolution, QpError> {
    let n = c.len();
    let mut spec = QpSpec::zero(n);
    spec.q = c.clone();
    spec.a_in = a_in.clone();
    spec.b_in = b_in.clone();
    if let Some((ae, be)) = a_eq {
        spec.a_eq = ae.clone();
        spec.b_eq = be.clone();
    }
    solve_qp(&spec, settings)
}

/// KKT stationarity residual `|| P z + q + A' y ||_inf` from recovered duals.
pub fn kkt_stationarity(spec: &QpSpec, sol: &QpSolution) -> Option<f64> {
    let duals = sol.stats.duals.as_ref()?;
    let neq = spec.a_eq.nrows();
    let nin = spec.a_in.nrows();
    if duals.len() != neq + nin {
        return None;
    }
    let mut grad = &spec.p * &sol.z + &spec.q;
    if neq > 0 {
        grad += spec.a_eq.transpose() * duals.rows(0, neq);
    }
    if nin > 0 {
        grad += spec.a_in.transpose() * duals.rows(neq, nin);
    }
    Some(grad.amax())
}

/// Builder assembling a QP incrementally; rows are kept dense.
#[derive(Debug, Clone)]
pub struct QpBuilder {
    layout: VariableLayout,
    pub ranges: BTreeMap<String, Range<usize>>,
    p: DMatrix<f64>,
    q: DVector<f64>,
    r0: f64,
    eq_rows: Vec<(DVector<f64>, f64)>,
    in_rows: Vec<(DVector<f64>, f64)>,
}

impl QpBuilder {
    pub fn new(layout: VariableLayout) -> Self {
        let n = layout.total();
        let ranges = layout
            .blocks()
            .iter()
            .map(|(name, r)| (name.clone(), r.clone()))
            .collect();
        Self {
            layout,
            ranges,
            p: DMatrix::zeros(n, n),
            q: DVector::zeros(n),
            r0: 0.0,
            eq_rows: Vec::new(),
            in_rows: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.q.len()
    }

    /// Add `x' W x` over the given index range (contributes 2W to P).
    pub fn add_quadratic(&mut self, range: Range<usize>, w: &DMatrix<f64>) {
        for (bi, i) in range.clone().enumerate() {
            for (bj, j) in range.clone().enumerate() {
                self.p[(i, j)] += 2.0 * w[(bi, bj)];
            }
        }
    }

    /// Add `(coeff/2) * ||x - center||^2` over the given index range.
    pub fn add_proximal(&mut self, range: Range<usize>, coeff: f64, center: &DVector<f64>) {
        for (bi, i) in range.clone().enumerate() {
            self.p[(i, i)] += coeff;
            self.q[i] -= coeff * center[bi];
            self.r0 += 0.5 * coeff * center[bi] * center[bi];
        }
    }

    pub fn add_linear(&mut self, range: Range<usize>, coeffs: &DVector<f64>) {
        for (bi, i) in range.enumerate() {
            self.q[i] += coeffs[bi];
        }
    }

    /// Equality rows `sum_b M_b z_b = rhs` given per-block coefficients.
    pub fn add_eq_rows(&mut self, terms: &[(Range<usize>, &DMatrix<f64>)], rhs: &DVector<f64>) {
        let n = self.n_vars();
        let nrows = rhs.len();
        for r in 0..nrows {
            let mut row = DVector::zeros(n);
            for (range, m) in terms {
                for (bc, c) in range.clone().enumerate() {
                    row[c] += m[(r, bc)];
                }
            }
            self.eq_rows.push((row, rhs[r]));
        }
    }

    /// Inequality rows `sum_b M_b z_b <= rhs`.
    pub fn add_in_rows(&mut self, terms: &[(Range<usize>, &DMatrix<f64>)], rhs: &DVector<f64>) {
        let n = self.n_vars();
        let nrows = rhs.len();
        for r in 0..nrows {
            let mut row = DVector::zeros(n);
            for (range, m) in terms {
                for (bc, c) in range.clone().enumerate() {
                    row[c] += m[(r, bc)];
                }
            }
            self.in_rows.push((row, rhs[r]));
        }
    }

    pub fn add_offset(&mut self, r0: f64) {
        self.r0 += r0;
    }

    pub fn build(self) -> QpSpec {
        let n = self.q.len();
        let neq = self.eq_rows.len();
        let nin = self.in_rows.len();
        let mut a_eq = DMatrix::zeros(neq, n);
        let mut b_eq = DVector::zeros(neq);
        for (r, (row, rhs)) in self.eq_rows.into_iter().enumerate() {
            a_eq.row_mut(r).copy_from(&row.transpose());
            b_eq[r] = rhs;
        }
        let mut a_in = DMatrix::zeros(nin, n);
        let mut b_in = DVector::zeros(nin);
        for (r, (row, rhs)) in self.in_rows.into_iter().enumerate() {
            a_in.row_mut(r).copy_from(&row.transpose());
            b_in[r] = rhs;
        }
        QpSpec {
            p: self.p,
            q: self.q,
            r0: self.r0,
            a_eq,
            b_eq,
            a_in,
            b_in,
            layout: self.layout,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_spec() -> QpSpec {
        // min z^2 s.t. z >= 1
        let mut spec = QpSpec::zero(1);
        spec.p[(0, 0)] = 2.0;
        spec.a_in = DMatrix::from_row_slice(1, 1, &[-1.0]);
        spec.b_in = DVector::from_row_slice(&[-1.0]);
        spec
    }

    #[test]
    fn qp_scalar_inequality() {
        let sol = solve_qp(&scalar_spec(), &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.z[0], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.objective, 1.0, epsilon = 1e-7);
    }

    #[test]
    fn qp_equality_pin() {
        // min (z-3)^2 s.t. z = 0  ->  z = 0, obj = 9
        let mut spec = QpSpec::zero(1);
        spec.p[(0, 0)] = 2.0;
        spec.q[0] = -6.0;
        spec.r0 = 9.0;
        spec.a_eq = DMatrix::from_row_slice(1, 1, &[1.0]);
        spec.b_eq = DVector::from_row_slice(&[0.0]);
        let sol = solve_qp(&spec, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.z[0], 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.objective, 9.0, epsilon = 1e-7);
    }

    #[test]
    fn qp_infeasible() {
        // min z^2 s.t. z >= 1, z <= 0
        let mut spec = scalar_spec();
        spec.a_in = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
        spec.b_in = DVector::from_row_slice(&[-1.0, 0.0]);
        let sol = solve_qp(&spec, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn lp_bounded() {
        // max x on [-1, 1]  ->  1
        let c = DVector::from_row_slice(&[-1.0]);
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_row_slice(&[1.0, 1.0]);
        let sol = solve_lp(&c, &a, &b, None, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.z[0], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn lp_unbounded() {
        // max x s.t. x >= 0
        let c = DVector::from_row_slice(&[-1.0]);
        let a = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let b = DVector::from_row_slice(&[0.0]);
        let sol = solve_lp(&c, &a, &b, None, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Unbounded);
    }

    #[test]
    fn lp_infeasible() {
        // {x <= -1, x >= 1}
        let c = DVector::zeros(1);
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_row_slice(&[-1.0, -1.0]);
        let sol = solve_lp(&c, &a, &b, None, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn kkt_residual_small() {
        let spec = scalar_spec();
        let sol = solve_qp(&spec, &QpSettings::default()).unwrap();
        let kkt = kkt_stationarity(&spec, &sol).unwrap();
        assert!(kkt < 1e-6, "stationarity residual {kkt}");
    }

    #[test]
    fn deterministic_resolve() {
        let spec = scalar_spec();
        let a = solve_qp(&spec, &QpSettings::default()).unwrap();
        let b = solve_qp(&spec, &QpSettings::default()).unwrap();
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.z, b.z);
    }

    #[test]
    fn layout_gaps_rejected() {
        let mut spec = QpSpec::zero(2);
        spec.layout = VariableLayout::new();
        spec.layout.push("a", 1); // covers only 1 of 2
        assert!(matches!(spec.validate(), Err(QpError::Malformed(_))));
    }
}
