//! VU decomposition of the subdifferential polytope.
//!
//! Given generators of `co ∂f(x̄)` and an anchor `z̄` in the hull,
//! `V = span{co ∂f(x̄) − z̄}` collects the directions of nonsmoothness and
//! `U = V^⊥` the directions along which `f` behaves smoothly. The frame is
//! stored as two orthonormal bases so that every point splits as
//! `x = U x_U + V x_V` with `‖x‖² = ‖x_U‖² + ‖x_V‖²`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hull::{hull_distance, project_onto_hull};
use crate::lattice::sphere_directions;
use crate::linalg::{dot, norm, orthogonal_complement, orthonormal_span, sub, subspace_gap, Matrix};
use crate::oracle::{FunctionModel, DEFAULT_ACTIVE_TOL};
use crate::scalar::{to_f64_vec, Scalar};

/// Relative rank threshold used when the caller has no better value.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;
/// Absolute feasibility tolerance for "anchor lies in the hull".
pub const HULL_FEASIBILITY_TOL: f64 = 1e-8;

/// Finite generator representation of `co ∂f(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubdifferentialPolytope<S> {
    point: Vec<S>,
    generators: Vec<Vec<S>>,
    exact: bool,
}

impl<S: Scalar> SubdifferentialPolytope<S> {
    /// Builds the polytope, dropping generators within `1e-12` of an earlier one.
    pub fn new(point: Vec<S>, generators: Vec<Vec<S>>, exact: bool) -> Self {
        assert!(!generators.is_empty(), "a subdifferential polytope needs a generator");
        let mut unique: Vec<Vec<S>> = Vec::with_capacity(generators.len());
        for g in generators {
            if !unique.iter().any(|u| norm(&sub(u, &g)) <= S::lit(1e-12)) {
                unique.push(g);
            }
        }
        SubdifferentialPolytope { point, generators: unique, exact }
    }

    pub fn point(&self) -> &[S] {
        &self.point
    }

    pub fn generators(&self) -> &[Vec<S>] {
        &self.generators
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    pub fn dim(&self) -> usize {
        self.point.len()
    }

    /// Support function `δ*(u) = max_g ⟨g, u⟩`.
    pub fn support(&self, u: &[S]) -> S {
        self.generators.iter().map(|g| dot(g, u)).fold(S::neg_infinity(), S::max)
    }

    pub fn distance_to(&self, z: &[S]) -> S {
        hull_distance(&self.generators, z)
    }

    pub fn contains(&self, z: &[S], tol: S) -> bool {
        self.distance_to(z) <= tol
    }

    /// Whether `z` lies in the relative interior: inside the hull and still
    /// inside after a small step along every direction of the affine span.
    pub fn contains_relative_interior(&self, z: &[S], tol: S) -> bool {
        if !self.contains(z, tol) {
            return false;
        }
        let diffs: Vec<Vec<S>> = self.generators.iter().map(|g| sub(g, z)).collect();
        let span = orthonormal_span(self.dim(), &diffs, S::lit(DEFAULT_RANK_TOL));
        let width = self.generators.iter().map(|g| norm(&sub(g, z))).fold(S::zero(), S::max);
        let step = width * S::lit(1e-6);
        for b in span.columns() {
            for sign in [S::one(), -S::one()] {
                let probe: Vec<S> = z.iter().zip(&b).map(|(&zi, &bi)| zi + sign * step * bi).collect();
                if self.distance_to(&probe) > tol + step * S::lit(1e-3) {
                    return false;
                }
            }
        }
        true
    }
}

/// Centroid of the deduplicated generators.
///
/// Lies in the relative interior of the hull whenever the generators are its
/// vertices.
pub fn relative_interior_point<S: Scalar>(poly: &SubdifferentialPolytope<S>) -> Vec<S> {
    let n = poly.dim();
    let k = S::from_count(poly.generators().len());
    let mut c = vec![S::zero(); n];
    for g in poly.generators() {
        for i in 0..n {
            c[i] = c[i] + g[i];
        }
    }
    c.into_iter().map(|x| x / k).collect()
}

/// Base point, anchor and orthonormal `U`/`V` bases.
#[derive(Debug, Clone, PartialEq)]
pub struct VuFrame<S> {
    pub x_bar: Vec<S>,
    pub z_bar: Vec<S>,
    /// `n × k`, orthonormal columns.
    pub u_basis: Matrix<S>,
    /// `n × (n−k)`, orthonormal columns.
    pub v_basis: Matrix<S>,
    /// Radius of the balls `B_ε^U`, `B_ε^V` used downstream.
    pub epsilon: S,
}

impl<S: Scalar> VuFrame<S> {
    pub fn dim(&self) -> usize {
        self.x_bar.len()
    }

    pub fn dim_u(&self) -> usize {
        self.u_basis.cols()
    }

    pub fn dim_v(&self) -> usize {
        self.v_basis.cols()
    }

    pub fn with_radius(mut self, epsilon: S) -> Self {
        self.epsilon = epsilon;
        self
    }

    /// Replaces the anchor (e.g. by another relative-interior point); the
    /// subspaces are unchanged.
    pub fn with_anchor(mut self, z_bar: Vec<S>) -> Self {
        self.z_bar = z_bar;
        self
    }

    /// `(Uᵀx, Vᵀx)`.
    pub fn project(&self, x: &[S]) -> (Vec<S>, Vec<S>) {
        (self.u_basis.tr_mul_vec(x), self.v_basis.tr_mul_vec(x))
    }

    /// `U x_U + V x_V`.
    pub fn embed(&self, x_u: &[S], x_v: &[S]) -> Vec<S> {
        let a = if x_u.is_empty() { vec![S::zero(); self.dim()] } else { self.u_basis.mul_vec(x_u) };
        let b = if x_v.is_empty() { vec![S::zero(); self.dim()] } else { self.v_basis.mul_vec(x_v) };
        a.iter().zip(&b).map(|(&p, &q)| p + q).collect()
    }

    /// `P_U x` as a vector of `ℝⁿ`.
    pub fn project_u(&self, x: &[S]) -> Vec<S> {
        let c = self.u_basis.tr_mul_vec(x);
        self.embed(&c, &[])
    }

    /// `P_V x` as a vector of `ℝⁿ`.
    pub fn project_v(&self, x: &[S]) -> Vec<S> {
        let c = self.v_basis.tr_mul_vec(x);
        self.embed(&[], &c)
    }

    /// `z̄_U` and `z̄_V` as vectors of `ℝⁿ`.
    pub fn anchor_components(&self) -> (Vec<S>, Vec<S>) {
        (self.project_u(&self.z_bar), self.project_v(&self.z_bar))
    }

    /// Checks the frame invariants against a polytope: orthogonality,
    /// `P_U(g − z̄) = 0` for every generator and `z̄ ∈ co(generators)`.
    pub fn validate(&self, poly: &SubdifferentialPolytope<S>) -> Result<()> {
        let cross = self.u_basis.transpose().mul(&self.v_basis);
        if cross.max_abs() > S::lit(1e-12) {
            return Err(Error::PreconditionFailed(format!(
                "U and V not orthogonal: {:e}",
                cross.max_abs().to_f64_lossy()
            )));
        }
        for g in poly.generators() {
            let r = norm(&self.u_basis.tr_mul_vec(&sub(g, &self.z_bar)));
            if r > S::lit(1e-10) {
                return Err(Error::PreconditionFailed(format!(
                    "generator {:?} has U-residual {:e}",
                    to_f64_vec(g),
                    r.to_f64_lossy()
                )));
            }
        }
        let d = poly.distance_to(&self.z_bar);
        if d > S::lit(HULL_FEASIBILITY_TOL) {
            return Err(Error::AnchorNotInHull { distance: d.to_f64_lossy() });
        }
        Ok(())
    }

    pub fn to_json(&self) -> FrameJson {
        FrameJson {
            x_bar: to_f64_vec(&self.x_bar),
            z_bar: to_f64_vec(&self.z_bar),
            u_basis: self.u_basis.columns().iter().map(|c| to_f64_vec(c)).collect(),
            v_basis: self.v_basis.columns().iter().map(|c| to_f64_vec(c)).collect(),
            epsilon: self.epsilon.to_f64_lossy(),
        }
    }

    pub fn from_json(json: &FrameJson) -> Result<Self> {
        let n = json.x_bar.len();
        let cols = |list: &[Vec<f64>]| -> Result<Matrix<S>> {
            let c: Vec<Vec<S>> = list.iter().map(|c| c.iter().map(|&x| S::lit(x)).collect()).collect();
            if c.iter().any(|col| col.len() != n) {
                return Err(Error::Problem("frame basis column has wrong length".into()));
            }
            Ok(Matrix::from_columns(n, &c))
        };
        if json.z_bar.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: json.z_bar.len() });
        }
        let frame = VuFrame {
            x_bar: json.x_bar.iter().map(|&x| S::lit(x)).collect(),
            z_bar: json.z_bar.iter().map(|&x| S::lit(x)).collect(),
            u_basis: cols(&json.u_basis)?,
            v_basis: cols(&json.v_basis)?,
            epsilon: S::lit(json.epsilon),
        };
        if frame.dim_u() + frame.dim_v() != n {
            return Err(Error::Problem("U and V dimensions do not add up".into()));
        }
        Ok(frame)
    }
}

/// JSON form of a frame: bases are lists of columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameJson {
    pub x_bar: Vec<f64>,
    pub z_bar: Vec<f64>,
    pub u_basis: Vec<Vec<f64>>,
    pub v_basis: Vec<Vec<f64>>,
    pub epsilon: f64,
}

/// Computes the VU frame at `poly.point()` anchored at `z_bar`.
///
/// Singular values of `{g − z̄}` below `rank_tol·σ_max` count as zero.
pub fn decompose<S: Scalar>(poly: &SubdifferentialPolytope<S>, z_bar: &[S], rank_tol: S) -> Result<VuFrame<S>> {
    let n = poly.dim();
    let proj = project_onto_hull(poly.generators(), z_bar);
    if proj.distance > S::lit(HULL_FEASIBILITY_TOL) {
        return Err(Error::AnchorNotInHull { distance: proj.distance.to_f64_lossy() });
    }
    let diffs: Vec<Vec<S>> = poly.generators().iter().map(|g| sub(g, z_bar)).collect();
    let v_basis = orthonormal_span(n, &diffs, rank_tol);
    let u_basis = orthogonal_complement(&v_basis);
    Ok(VuFrame { x_bar: poly.point().to_vec(), z_bar: z_bar.to_vec(), u_basis, v_basis, epsilon: S::one() })
}

/// `(x_U, x_V)` coordinates of `x` in the frame.
pub fn project<S: Scalar>(frame: &VuFrame<S>, x: &[S]) -> (Vec<S>, Vec<S>) {
    frame.project(x)
}

/// Sampled verification of the decomposition identities.
#[derive(Debug, Clone, Serialize)]
pub struct DecompositionReport {
    /// `max_{u∈U} |δ*(u) + δ*(−u)|` over sampled unit `u`.
    pub max_support_gap_on_u: f64,
    pub u_samples: usize,
    /// `max_g ‖P_U g − z̄_U‖`.
    pub max_u_component_spread: f64,
    /// Sampled `u ∉ U` with `δ*(u) + δ*(−u) > 0`: (direction, gap).
    pub off_u_witnesses: Vec<(Vec<f64>, f64)>,
    pub off_u_samples: usize,
}

impl DecompositionReport {
    /// Every sampled direction off `U` must show a positive gap.
    pub fn witnesses_complete(&self) -> bool {
        self.off_u_witnesses.len() == self.off_u_samples
    }
}

/// Checks `U = {u : −δ*(−u) = δ*(u)}` and `∂f(x̄) = {z̄_U} ⊕ ∂_V f(x̄)` on
/// deterministic direction samples.
pub fn check_decomposition<S: Scalar>(model: &FunctionModel<S>, frame: &VuFrame<S>, samples: usize) -> Result<DecompositionReport> {
    let poly = model.subdifferential_polytope(&frame.x_bar, S::lit(DEFAULT_ACTIVE_TOL))?;
    if !poly.is_exact() {
        return Err(Error::PreconditionFailed("decomposition check needs an exact polytope".into()));
    }
    let gap = |u: &[S]| {
        let neg: Vec<S> = u.iter().map(|&x| -x).collect();
        poly.support(u) + poly.support(&neg)
    };

    let mut max_gap = S::zero();
    let k = frame.dim_u();
    let u_dirs: Vec<Vec<S>> = sphere_directions(k, samples);
    for d in &u_dirs {
        let u = frame.u_basis.mul_vec(d);
        max_gap = max_gap.max(gap(&u).abs());
    }

    let (z_u, _) = frame.anchor_components();
    let mut spread = S::zero();
    for g in poly.generators() {
        spread = spread.max(norm(&sub(&frame.project_u(g), &z_u)));
    }

    let mut witnesses = Vec::new();
    let mut off = 0;
    if frame.dim_v() > 0 {
        for d in sphere_directions::<S>(frame.dim(), samples) {
            if norm(&frame.project_v(&d)) < S::lit(0.1) {
                continue;
            }
            off += 1;
            let g = gap(&d);
            if g > S::lit(1e-10) {
                witnesses.push((to_f64_vec(&d), g.to_f64_lossy()));
            }
        }
    }

    Ok(DecompositionReport {
        max_support_gap_on_u: max_gap.to_f64_lossy(),
        u_samples: u_dirs.len(),
        max_u_component_spread: spread.to_f64_lossy(),
        off_u_witnesses: witnesses,
        off_u_samples: off,
    })
}

/// Sine of the largest principal angle between two frames' `U` spaces.
pub fn u_subspace_gap<S: Scalar>(a: &VuFrame<S>, b: &VuFrame<S>) -> S {
    subspace_gap(&a.u_basis, &b.u_basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{builtin, crossing_base_point};

    fn poly_at_base(name: &str) -> (FunctionModel<f64>, SubdifferentialPolytope<f64>) {
        let m: FunctionModel<f64> = builtin(name).unwrap();
        let p = m.subdifferential_polytope(m.base_point(), 1e-9).unwrap();
        (m, p)
    }

    #[test]
    fn centroid_examples() {
        let p = SubdifferentialPolytope::new(vec![0.0, 0.0], vec![vec![0.0, 1.0 - 5f64.sqrt()], vec![0.0, 1.0]], true);
        let c = relative_interior_point(&p);
        assert_eq!(c[0], 0.0);
        assert!((c[1] - (2.0 - 5f64.sqrt()) / 2.0).abs() < 1e-15);
        let single = SubdifferentialPolytope::new(vec![0.0], vec![vec![3.5]], true);
        assert_eq!(relative_interior_point(&single), vec![3.5]);
        let pair = SubdifferentialPolytope::new(vec![0.0; 2], vec![vec![1.0, -1.0], vec![-1.0, 1.0]], true);
        assert_eq!(relative_interior_point(&pair), vec![0.0, 0.0]);
    }

    #[test]
    fn duplicates_are_dropped() {
        let p = SubdifferentialPolytope::new(vec![0.0], vec![vec![1.0], vec![1.0 + 1e-14], vec![-1.0]], true);
        assert_eq!(p.generators().len(), 2);
    }

    #[test]
    fn crossing_frame() {
        let (m, p) = poly_at_base("crossing_max");
        assert_eq!(p.point(), &[0.0, crossing_base_point()]);
        let z = relative_interior_point(&p);
        let f = decompose(&p, &z, 1e-8).unwrap();
        assert_eq!(f.dim_u(), 1);
        assert!(subspace_gap(&f.u_basis, m.known_u().unwrap()) < 1e-8);
        f.validate(&p).unwrap();
        let (xu, xv) = f.project(&[0.3, 0.7]);
        assert!((xu[0].abs() - 0.3).abs() < 1e-15 && (xv[0].abs() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn four_quadrant_has_trivial_u() {
        let (_, p) = poly_at_base("four_quadrant_max");
        let f = decompose(&p, &[0.0, 0.0], 1e-8).unwrap();
        assert_eq!(f.dim_u(), 0);
        assert_eq!(f.dim_v(), 2);
    }

    #[test]
    fn abs_diff_frame() {
        let (m, p) = poly_at_base("abs_diff");
        let f = decompose(&p, &[0.0, 0.0], 1e-8).unwrap();
        assert!(subspace_gap(&f.u_basis, m.known_u().unwrap()) < 1e-12);
        let (xu, xv) = f.project(&[1.0, 1.0]);
        assert!((xu[0].abs() - 2f64.sqrt()).abs() < 1e-15);
        assert!(xv[0].abs() < 1e-15);
        let r = check_decomposition(&m, &f, 100).unwrap();
        assert!(r.max_support_gap_on_u <= 1e-12);
        assert!(r.witnesses_complete());
    }

    #[test]
    fn anchor_outside_hull() {
        let (_, p) = poly_at_base("abs_diff");
        assert!(matches!(decompose(&p, &[3.0, 0.0], 1e-8), Err(Error::AnchorNotInHull { .. })));
    }

    #[test]
    fn relative_interior_detection() {
        let (_, p) = poly_at_base("crossing_max");
        assert!(p.contains_relative_interior(&[0.0, 0.0], 1e-10));
        assert!(!p.contains_relative_interior(&[0.0, 1.0], 1e-10));
    }

    #[test]
    fn frame_json_roundtrip() {
        let (_, p) = poly_at_base("abs_diff");
        let f = decompose(&p, &[0.0, 0.0], 1e-8).unwrap().with_radius(0.5);
        let text = serde_json::to_string(&f.to_json()).unwrap();
        let back: VuFrame<f64> = VuFrame::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, f);
    }
}
