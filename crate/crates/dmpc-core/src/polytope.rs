//! Halfspace-polytope algebra: membership, emptiness, support functions,
//! Pontryagin difference, Minkowski sums, preimages, intersection and set
//! equality. All set queries reduce to small LPs; Minkowski sums go through
//! vertex enumeration and are restricted to ambient dimension <= 3.

use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::qp::{self, QpSettings, QpStatus};

/// Default geometric tolerance for membership and equality checks. All
/// tolerances in the crate flow from this one value unless overridden.
pub const GEOM_TOL: f64 = 1e-9;

/// Largest ambient dimension supported by vertex-enumeration routines.
pub const MAX_VERTEX_DIM: usize = 3;

#[derive(Debug, Error)]
pub enum PolytopeError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("non-finite entry in polytope data")]
    NonFinite,
    #[error("operation on an empty set")]
    EmptySet,
    #[error("polytope is unbounded in a required direction")]
    Unbounded,
    #[error("ambient dimension {0} exceeds the supported limit {MAX_VERTEX_DIM}")]
    UnsupportedDimension(usize),
    #[error("box bounds must satisfy lo <= hi componentwise")]
    BadBounds,
    #[error("degenerate (lower-dimensional) result not representable")]
    Degenerate,
    #[error("LP backend: {0}")]
    Solver(#[from] qp::QpError),
    #[error("LP backend returned an unexpected status")]
    SolverStatus,
}

/// Convex polytope `{ x | H x <= h }` in halfspace representation.
///
/// The representation may be redundant and may be infeasible; emptiness is
/// decided by [`HPolytope::is_empty`], never assumed.
#[derive(Debug, Clone, PartialEq)]
pub struct HPolytope {
    facets: DMatrix<f64>,
    offsets: DVector<f64>,
}

impl HPolytope {
    pub fn new(facets: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self, PolytopeError> {
        if facets.nrows() != offsets.len() {
            return Err(PolytopeError::DimMismatch {
                expected: facets.nrows(),
                got: offsets.len(),
            });
        }
        if facets.iter().chain(offsets.iter()).any(|v| !v.is_finite()) {
            return Err(PolytopeError::NonFinite);
        }
        Ok(Self { facets, offsets })
    }

    /// Axis-aligned box from per-coordinate bounds.
    pub fn from_box(lo: &DVector<f64>, hi: &DVector<f64>) -> Result<Self, PolytopeError> {
        if lo.len() != hi.len() {
            return Err(PolytopeError::DimMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(hi.iter()).any(|(l, u)| l > u) {
            return Err(PolytopeError::BadBounds);
        }
        let d = lo.len();
        let mut facets = DMatrix::zeros(2 * d, d);
        let mut offsets = DVector::zeros(2 * d);
        for k in 0..d {
            facets[(k, k)] = 1.0;
            offsets[k] = hi[k];
            facets[(d + k, k)] = -1.0;
            offsets[d + k] = -lo[k];
        }
        Self::new(facets, offsets)
    }

    /// The singleton `{0}` in dimension `d`.
    pub fn zero_point(d: usize) -> Self {
        let zeros = DVector::zeros(d);
        Self::from_box(&zeros, &zeros).expect("zero box is well formed")
    }

    /// Canonical empty polytope `{ x | 0'x <= -1 }` in dimension `d`.
    pub fn empty(d: usize) -> Self {
        Self::new(DMatrix::zeros(1, d), DVector::from_element(1, -1.0))
            .expect("canonical empty system is well formed")
    }

    pub fn dim(&self) -> usize {
        self.facets.ncols()
    }

    pub fn n_facets(&self) -> usize {
        self.facets.nrows()
    }

    pub fn facets(&self) -> &DMatrix<f64> {
        &self.facets
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.offsets
    }

    fn check_dim(&self, d: usize) -> Result<(), PolytopeError> {
        if self.dim() != d {
            Err(PolytopeError::DimMismatch {
                expected: self.dim(),
                got: d,
            })
        } else {
            Ok(())
        }
    }

    /// Closure membership with tolerance: `H x <= h + tol`.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> Result<bool, PolytopeError> {
        self.check_dim(x.len())?;
        let slack = &self.facets * x - &self.offsets;
        Ok(slack.iter().all(|s| *s <= tol))
    }

    /// Strict-interior membership: `H x < h - tol`.
    pub fn contains_interior(&self, x: &DVector<f64>, tol: f64) -> Result<bool, PolytopeError> {
        self.check_dim(x.len())?;
        let slack = &self.facets * x - &self.offsets;
        Ok(slack.iter().all(|s| *s < -tol))
    }

    /// Emptiness via one LP feasibility solve.
    pub fn is_empty(&self) -> Result<bool, PolytopeError> {
        if self.n_facets() == 0 {
            return Ok(false);
        }
        let c = DVector::zeros(self.dim());
        let sol = qp::solve_lp(&c, &self.facets, &self.offsets, None, &lp_settings())?;
        match sol.status {
            QpStatus::Optimal => Ok(false),
            QpStatus::Infeasible => Ok(true),
            _ => Err(PolytopeError::SolverStatus),
        }
    }

    /// Support value `max_{x in P} d' x` via LP.
    pub fn support(&self, d: &DVector<f64>) -> Result<f64, PolytopeError> {
        self.check_dim(d.len())?;
        let sol = qp::solve_lp(&(-d), &self.facets, &self.offsets, None, &lp_settings())?;
        match sol.status {
            QpStatus::Optimal => Ok(-sol.objective),
            QpStatus::Infeasible => Err(PolytopeError::EmptySet),
            QpStatus::Unbounded => Err(PolytopeError::Unbounded),
            _ => Err(PolytopeError::SolverStatus),
        }
    }

    /// Pontryagin difference `P (-) W = { x | H x <= h - sigma }` with
    /// `sigma_k = support(W, H_k)`. Exact for halfspace representations.
    pub fn pontryagin_diff(&self, w: &HPolytope) -> Result<HPolytope, PolytopeError> {
        w.check_dim(self.dim())?;
        let mut offsets = self.offsets.clone();
        for k in 0..self.n_facets() {
            let d = self.facets.row(k).transpose();
            offsets[k] -= w.support(&d)?;
        }
        HPolytope::new(self.facets.clone(), offsets)
    }

    /// True iff the polytope is bounded, decided by support LPs along the
    /// positive and negative coordinate axes.
    pub fn is_bounded(&self) -> Result<bool, PolytopeError> {
        for k in 0..self.dim() {
            for sign in [1.0, -1.0] {
                let mut d = DVector::zeros(self.dim());
                d[k] = sign;
                match self.support(&d) {
                    Ok(_) => {}
                    Err(PolytopeError::Unbounded) => return Ok(false),
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(true)
    }

    /// Vertex enumeration by intersecting facet subsets; supported for
    /// ambient dimension <= 3.
    pub fn vertices(&self) -> Result<Vec<DVector<f64>>, PolytopeError> {
        let d = self.dim();
        if d == 0 || d > MAX_VERTEX_DIM {
            return Err(PolytopeError::UnsupportedDimension(d));
        }
        let m = self.n_facets();
        if m < d {
            return Err(PolytopeError::Unbounded);
        }
        let scale = self.offsets.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        let mut verts: Vec<DVector<f64>> = Vec::new();
        let mut idx = vec![0usize; d];
        enumerate_subsets(m, d, &mut idx, 0, 0, &mut |subset| {
            let mut a = DMatrix::zeros(d, d);
            let mut b = DVector::zeros(d);
            for (r, &k) in subset.iter().enumerate() {
                a.row_mut(r).copy_from(&self.facets.row(k));
                b[r] = self.offsets[k];
            }
            let lu = a.clone().lu();
            if let Some(v) = lu.solve(&b) {
                if v.iter().all(|c| c.is_finite() && c.abs() < 1e12) {
                    let slack = &self.facets * &v - &self.offsets;
                    if slack.iter().all(|s| *s <= 1e-7 * (1.0 + scale)) {
                        let dup = verts
                            .iter()
                            .any(|u| (u - &v).amax() <= 1e-7 * (1.0 + scale));
                        if !dup {
                            verts.push(v);
                        }
                    }
                }
            }
        });
        Ok(verts)
    }

    /// Minkowski sum via vertex enumeration, pairwise vertex sums, convex
    /// hull and facet extraction. Requires both operands bounded and
    /// ambient dimension <= 3.
    pub fn minkowski_sum(&self, other: &HPolytope) -> Result<HPolytope, PolytopeError> {
        other.check_dim(self.dim())?;
        let d = self.dim();
        if d == 0 || d > MAX_VERTEX_DIM {
            return Err(PolytopeError::UnsupportedDimension(d));
        }
        if self.is_empty()? || other.is_empty()? {
            return Ok(HPolytope::empty(d));
        }
        if !self.is_bounded()? || !other.is_bounded()? {
            return Err(PolytopeError::Unbounded);
        }
        let va = self.vertices()?;
        let vb = other.vertices()?;
        let mut sums = Vec::with_capacity(va.len() * vb.len());
        for a in &va {
            for b in &vb {
                sums.push(a + b);
            }
        }
        hull_to_hrep(&sums, d)
    }

    /// Preimage `{ x | A x in P }` given as rows `H A`, offsets `h`. Exact
    /// and defined for singular `A`.
    pub fn linear_preimage(&self, a: &DMatrix<f64>) -> Result<HPolytope, PolytopeError> {
        if a.nrows() != self.dim() {
            return Err(PolytopeError::DimMismatch {
                expected: self.dim(),
                got: a.nrows(),
            });
        }
        HPolytope::new(&self.facets * a, self.offsets.clone())
    }

    /// Image `A * P`. Invertible and zero maps are handled exactly; other
    /// rank-deficient maps are supported only in 2D (segment images).
    pub fn linear_image(&self, a: &DMatrix<f64>) -> Result<HPolytope, PolytopeError> {
        if a.ncols() != self.dim() {
            return Err(PolytopeError::DimMismatch {
                expected: self.dim(),
                got: a.ncols(),
            });
        }
        if a.nrows() != a.ncols() {
            return Err(PolytopeError::UnsupportedDimension(a.nrows()));
        }
        let d = self.dim();
        if a.amax() == 0.0 {
            return Ok(HPolytope::zero_point(d));
        }
        if let Some(ainv) = a.clone().try_inverse() {
            // numerically reliable only away from singularity
            let cond_ok = ainv.amax() * a.amax() < 1e12;
            if cond_ok {
                return HPolytope::new(&self.facets * &ainv, self.offsets.clone());
            }
        }
        // rank-deficient map: fall back to mapped vertices
        let verts = self.vertices()?;
        let mapped: Vec<DVector<f64>> = verts.iter().map(|v| a * v).collect();
        hull_to_hrep(&mapped, d)
    }

    /// Stacked halfspaces of both operands; optional redundancy pruning.
    pub fn intersect(&self, other: &HPolytope, prune: bool) -> Result<HPolytope, PolytopeError> {
        other.check_dim(self.dim())?;
        let m = self.n_facets() + other.n_facets();
        let mut facets = DMatrix::zeros(m, self.dim());
        facets
            .view_mut((0, 0), (self.n_facets(), self.dim()))
            .copy_from(&self.facets);
        facets
            .view_mut((self.n_facets(), 0), (other.n_facets(), self.dim()))
            .copy_from(&other.facets);
        let mut offsets = DVector::zeros(m);
        offsets
            .rows_mut(0, self.n_facets())
            .copy_from(&self.offsets);
        offsets
            .rows_mut(self.n_facets(), other.n_facets())
            .copy_from(&other.offsets);
        let stacked = HPolytope::new(facets, offsets)?;
        if prune {
            stacked.prune_redundant()
        } else {
            Ok(stacked)
        }
    }

    /// Remove rows implied by the remaining system (per-facet LP test).
    pub fn prune_redundant(&self) -> Result<HPolytope, PolytopeError> {
        if self.is_empty()? {
            return Ok(self.clone());
        }
        let mut keep: Vec<usize> = (0..self.n_facets()).collect();
        let mut k = 0;
        while k < keep.len() {
            if keep.len() == 1 {
                break;
            }
            let row = keep[k];
            let rest: Vec<usize> = keep.iter().copied().filter(|r| *r != row).collect();
            let mut a = DMatrix::zeros(rest.len(), self.dim());
            let mut b = DVector::zeros(rest.len());
            for (r, &src) in rest.iter().enumerate() {
                a.row_mut(r).copy_from(&self.facets.row(src));
                b[r] = self.offsets[src];
            }
            let sub = HPolytope::new(a, b)?;
            let dir = self.facets.row(row).transpose();
            let redundant = match sub.support(&dir) {
                Ok(s) => s <= self.offsets[row] + GEOM_TOL,
                Err(PolytopeError::Unbounded) => false,
                Err(e) => return Err(e),
            };
            if redundant {
                keep.remove(k);
            } else {
                k += 1;
            }
        }
        let mut facets = DMatrix::zeros(keep.len(), self.dim());
        let mut offsets = DVector::zeros(keep.len());
        for (r, &src) in keep.iter().enumerate() {
            facets.row_mut(r).copy_from(&self.facets.row(src));
            offsets[r] = self.offsets[src];
        }
        HPolytope::new(facets, offsets)
    }

    /// Inclusion `self subset-of other` checked facetwise by LP within tol.
    pub fn is_subset_of(&self, other: &HPolytope, tol: f64) -> Result<bool, PolytopeError> {
        other.check_dim(self.dim())?;
        if self.is_empty()? {
            return Ok(true);
        }
        for k in 0..other.n_facets() {
            let d = other.facets.row(k).transpose();
            match self.support(&d) {
                Ok(s) => {
                    if s > other.offsets[k] + tol {
                        return Ok(false);
                    }
                }
                Err(PolytopeError::Unbounded) => return Ok(false),
                Err(e) => return Err(e),
            }
        }
        Ok(true)
    }

    /// Mutual inclusion within tolerance; insensitive to redundant rows.
    pub fn set_equal(&self, other: &HPolytope, tol: f64) -> Result<bool, PolytopeError> {
        Ok(self.is_subset_of(other, tol)? && other.is_subset_of(self, tol)?)
    }

    /// Componentwise bounding box (requires boundedness).
    pub fn bounding_box(&self) -> Result<(DVector<f64>, DVector<f64>), PolytopeError> {
        let d = self.dim();
        let mut lo = DVector::zeros(d);
        let mut hi = DVector::zeros(d);
        for k in 0..d {
            let mut dir = DVector::zeros(d);
            dir[k] = 1.0;
            hi[k] = self.support(&dir)?;
            dir[k] = -1.0;
            lo[k] = -self.support(&dir)?;
        }
        Ok((lo, hi))
    }
}

fn lp_settings() -> QpSettings {
    QpSettings::default()
}

/// Visit all `k`-subsets of `0..m` in lexicographic order.
fn enumerate_subsets(
    m: usize,
    k: usize,
    idx: &mut Vec<usize>,
    depth: usize,
    start: usize,
    visit: &mut impl FnMut(&[usize]),
) {
    if depth == k {
        visit(idx);
        return;
    }
    for i in start..m {
        idx[depth] = i;
        enumerate_subsets(m, k, idx, depth + 1, i + 1, visit);
    }
}

/// Facet extraction from a point cloud (dimension 1..=3). Degenerate clouds
/// are handled in 1D and 2D (intervals, points, segments); a flat cloud in
/// 3D is rejected.
pub fn hull_to_hrep(points: &[DVector<f64>], dim: usize) -> Result<HPolytope, PolytopeError> {
    if points.is_empty() {
        return Ok(HPolytope::empty(dim));
    }
    let scale = points.iter().fold(1.0f64, |acc, p| acc.max(p.amax()));
    let tol = 1e-9 * (1.0 + scale);
    match dim {
        1 => {
            let lo = points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let hi = points
                .iter()
                .map(|p| p[0])
                .fold(f64::NEG_INFINITY, f64::max);
            HPolytope::from_box(&DVector::from_element(1, lo), &DVector::from_element(1, hi))
        }
        2 => hull_2d(points, tol),
        3 => hull_3d(points, tol),
        d => Err(PolytopeError::UnsupportedDimension(d)),
    }
}

fn hull_2d(points: &[DVector<f64>], tol: f64) -> Result<HPolytope, PolytopeError> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    pts.dedup_by(|a, b| (a.0 - b.0).abs() <= tol && (a.1 - b.1).abs() <= tol);
    if pts.len() == 1 {
        let v = DVector::from_row_slice(&[pts[0].0, pts[0].1]);
        return HPolytope::from_box(&v, &v);
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    // Andrew's monotone chain; collinear middle points are dropped
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= tol {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= tol {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    let mut hull = lower;
    hull.extend(upper);
    if hull.len() < 2 {
        return Err(PolytopeError::Degenerate);
    }
    if hull.len() == 2 {
        // segment: strip plus caps
        let (a, b) = (hull[0], hull[1]);
        let dir = (b.0 - a.0, b.1 - a.1);
        let norm = (dir.0 * dir.0 + dir.1 * dir.1).sqrt();
        let t = (dir.0 / norm, dir.1 / norm);
        let nrm = (-t.1, t.0);
        let facets =
            DMatrix::from_row_slice(4, 2, &[nrm.0, nrm.1, -nrm.0, -nrm.1, t.0, t.1, -t.0, -t.1]);
        let offsets = DVector::from_row_slice(&[
            nrm.0 * a.0 + nrm.1 * a.1,
            -(nrm.0 * a.0 + nrm.1 * a.1),
            t.0 * b.0 + t.1 * b.1,
            -(t.0 * a.0 + t.1 * a.1),
        ]);
        return HPolytope::new(facets, offsets);
    }
    let n = hull.len();
    let mut facets = DMatrix::zeros(n, 2);
    let mut offsets = DVector::zeros(n);
    for k in 0..n {
        let a = hull[k];
        let b = hull[(k + 1) % n];
        // outward normal for counterclockwise ordering
        let nx = b.1 - a.1;
        let ny = a.0 - b.0;
        let len = (nx * nx + ny * ny).sqrt();
        facets[(k, 0)] = nx / len;
        facets[(k, 1)] = ny / len;
        offsets[k] = (nx * a.0 + ny * a.1) / len;
    }
    HPolytope::new(facets, offsets)
}

fn hull_3d(points: &[DVector<f64>], tol: f64) -> Result<HPolytope, PolytopeError> {
    let mut pts: Vec<DVector<f64>> = Vec::new();
    for p in points {
        if !pts.iter().any(|q| (q - p).amax() <= tol) {
            pts.push(p.clone());
        }
    }
    if pts.len() < 4 {
        return Err(PolytopeError::Degenerate);
    }
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    let n = pts.len();
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                let u = &pts[j] - &pts[i];
                let v = &pts[k] - &pts[i];
                let normal = DVector::from_row_slice(&[
                    u[1] * v[2] - u[2] * v[1],
                    u[2] * v[0] - u[0] * v[2],
                    u[0] * v[1] - u[1] * v[0],
                ]);
                let len = normal.norm();
                if len <= tol {
                    continue;
                }
                let normal = normal / len;
                let off = normal.dot(&pts[i]);
                for sgn in [1.0f64, -1.0] {
                    let nrm = &normal * sgn;
                    let o = off * sgn;
                    if pts.iter().all(|p| nrm.dot(p) <= o + tol) {
                        let dup = rows.iter().any(|(rn, ro)| {
                            (rn - &nrm).amax() <= 1e-7 && (ro - o).abs() <= 1e-7 * (1.0 + o.abs())
                        });
                        if !dup {
                            rows.push((nrm, o));
                        }
                    }
                }
            }
        }
    }
    if rows.len() < 4 {
        return Err(PolytopeError::Degenerate);
    }
    let mut facets = DMatrix::zeros(rows.len(), 3);
    let mut offsets = DVector::zeros(rows.len());
    for (r, (nrm, o)) in rows.iter().enumerate() {
        facets.row_mut(r).copy_from(&nrm.transpose());
        offsets[r] = *o;
    }
    HPolytope::new(facets, offsets)
}

// JSON form: {"H": [[...], ...], "h": [...]} with H row-major. Boxes
// {"lo": [...], "hi": [...]} are accepted on input.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PolytopeJson {
    HRep {
        #[serde(rename = "H")]
        h_rows: Vec<Vec<f64>>,
        h: Vec<f64>,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

impl Serialize for HPolytope {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let h_rows: Vec<Vec<f64>> = (0..self.n_facets())
            .map(|r| self.facets.row(r).iter().copied().collect())
            .collect();
        PolytopeJson::HRep {
            h_rows,
            h: self.offsets.iter().copied().collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for HPolytope {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let json = PolytopeJson::deserialize(deserializer)?;
        match json {
            PolytopeJson::HRep { h_rows, h } => {
                let nrows = h_rows.len();
                let ncols = h_rows.first().map_or(0, |r| r.len());
                if h_rows.iter().any(|r| r.len() != ncols) {
                    return Err(D::Error::custom("ragged H matrix"));
                }
                let flat: Vec<f64> = h_rows.into_iter().flatten().collect();
                HPolytope::new(
                    DMatrix::from_row_slice(nrows, ncols, &flat),
                    DVector::from_vec(h),
                )
                .map_err(D::Error::custom)
            }
            PolytopeJson::Box { lo, hi } => {
                HPolytope::from_box(&DVector::from_vec(lo), &DVector::from_vec(hi))
                    .map_err(D::Error::custom)
            }
        }
    }
}
