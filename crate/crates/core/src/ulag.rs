//! Localized U-Lagrangian `L(u) = min_{v∈V′∩B} f(x̄+u+v) − ⟨z̄_V′, v⟩`, the
//! selection `v(u)`, and the checks built on them.
//!
//! Points of `U′` and `V′` are handled in coordinates of the context's
//! orthonormal bases.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{box_lattice, sphere_directions};
use crate::linalg::{norm, orthogonal_complement, Matrix};
use crate::oracle::{FunctionModel, DEFAULT_ACTIVE_TOL};
use crate::scalar::{to_f64_vec, Scalar};
use crate::search::{minimize_in_ball, BallObjective, SolverConfig};
use crate::vu::{decompose, relative_interior_point, SubdifferentialPolytope, VuFrame, DEFAULT_RANK_TOL};

/// Active-set tolerance used when cross-validating gradients.
pub const CROSS_CHECK_TAU: f64 = 1e-6;
/// Largest admissible distance between `(z_U, z̄_V)` and `co ∂f`.
pub const CROSS_CHECK_TOL: f64 = 1e-5;

/// Anchor for Lagrangian work: the origin when it lies in the relative
/// interior of the hull, the centroid otherwise.
pub fn default_anchor<S: Scalar>(poly: &SubdifferentialPolytope<S>) -> Vec<S> {
    let zero = vec![S::zero(); poly.dim()];
    if poly.contains_relative_interior(&zero, S::lit(1e-10)) {
        zero
    } else {
        relative_interior_point(poly)
    }
}

#[derive(Clone)]
pub struct ULagContext<S> {
    pub model: FunctionModel<S>,
    pub frame: VuFrame<S>,
    /// `U′ ⊆ U`, orthonormal columns.
    pub u_basis: Matrix<S>,
    /// `V′ = (U′)^⊥`, orthonormal columns.
    pub v_basis: Matrix<S>,
    pub eps_v: S,
    /// `V′ᵀ z̄`.
    pub z_bar_v: Vec<S>,
    pub solver: SolverConfig<S>,
}

/// One evaluation of the Lagrangian.
#[derive(Debug, Clone, Serialize)]
pub struct LagrangianPoint<S> {
    pub u: Vec<S>,
    /// `v(u)` in `V′` coordinates.
    pub v: Vec<S>,
    /// `x̄ + u + v(u)` in `ℝⁿ`.
    pub x: Vec<S>,
    pub value: S,
    pub f_value: S,
    pub boundary_active: bool,
    pub approximate: bool,
}

impl<S: Scalar> ULagContext<S> {
    /// Context on the full `U` of `frame`, with `ε_V = frame.ε`.
    pub fn new(model: FunctionModel<S>, frame: VuFrame<S>, solver: SolverConfig<S>) -> Self {
        let u_basis = frame.u_basis.clone();
        let v_basis = frame.v_basis.clone();
        let z_bar_v = v_basis.tr_mul_vec(&frame.z_bar);
        let eps_v = frame.epsilon;
        ULagContext { model, frame, u_basis, v_basis, eps_v, z_bar_v, solver }
    }

    /// Frame at the model's base point with the default anchor and radius `eps`.
    pub fn at_base(model: FunctionModel<S>, eps: S, solver: SolverConfig<S>) -> Result<Self> {
        let x_bar = model.base_point().to_vec();
        let poly = model.subdifferential_polytope(&x_bar, S::lit(DEFAULT_ACTIVE_TOL))?;
        let z_bar = default_anchor(&poly);
        let frame = decompose(&poly, &z_bar, S::lit(DEFAULT_RANK_TOL))?.with_radius(eps);
        Ok(ULagContext::new(model, frame, solver))
    }

    /// Restricts to a subspace `U′ ⊆ U`; `V′` becomes its complement.
    pub fn with_u_prime(mut self, basis: Matrix<S>) -> Result<Self> {
        let n = self.frame.dim();
        if basis.rows() != n {
            return Err(Error::DimensionMismatch { expected: n, got: basis.rows() });
        }
        for c in basis.columns() {
            let r = norm(&self.frame.project_v(&c));
            if r > S::lit(1e-10) {
                return Err(Error::PreconditionFailed(format!("U′ leaves U (residual {:e})", r.to_f64_lossy())));
            }
        }
        self.v_basis = orthogonal_complement(&basis);
        self.u_basis = basis;
        self.z_bar_v = self.v_basis.tr_mul_vec(&self.frame.z_bar);
        Ok(self)
    }

    pub fn with_eps_v(mut self, eps_v: S) -> Result<Self> {
        if !(eps_v > S::zero()) {
            return Err(Error::PreconditionFailed("ε_V must be positive".into()));
        }
        self.eps_v = eps_v;
        Ok(self)
    }

    /// Replaces the anchor; `z̄_V′` follows.
    pub fn with_anchor(mut self, z_bar: Vec<S>) -> Self {
        self.z_bar_v = self.v_basis.tr_mul_vec(&z_bar);
        self.frame = self.frame.with_anchor(z_bar);
        self
    }

    pub fn dim_u(&self) -> usize {
        self.u_basis.cols()
    }

    pub fn dim_v(&self) -> usize {
        self.v_basis.cols()
    }

    pub fn eps_u(&self) -> S {
        self.frame.epsilon
    }

    /// `x̄ + U′u + V′v`.
    pub fn point(&self, u: &[S], v: &[S]) -> Vec<S> {
        let mut x = self.frame.x_bar.clone();
        if !u.is_empty() {
            for (xi, d) in x.iter_mut().zip(self.u_basis.mul_vec(u)) {
                *xi = *xi + d;
            }
        }
        if !v.is_empty() {
            for (xi, d) in x.iter_mut().zip(self.v_basis.mul_vec(v)) {
                *xi = *xi + d;
            }
        }
        x
    }

    /// `P_V′ z̄` in `ℝⁿ`.
    pub fn z_bar_v_full(&self) -> Vec<S> {
        if self.z_bar_v.is_empty() {
            vec![S::zero(); self.frame.dim()]
        } else {
            self.v_basis.mul_vec(&self.z_bar_v)
        }
    }

    /// `f(x̄+u+v) − ⟨z̄_V′, v⟩`.
    pub fn objective(&self, u: &[S], v: &[S]) -> S {
        let x = self.point(u, v);
        let pairing: S = v.iter().zip(&self.z_bar_v).map(|(&a, &b)| a * b).sum();
        self.model.value(&x) - pairing
    }

    /// Computes `v(u)`, tie-broken by smallest norm then lexicographically.
    pub fn v_of_u(&self, u: &[S]) -> Result<LagrangianPoint<S>> {
        if u.len() != self.dim_u() {
            return Err(Error::DimensionMismatch { expected: self.dim_u(), got: u.len() });
        }
        if norm(u) > self.eps_u() * (S::one() + S::lit(1e-12)) {
            return Err(Error::PreconditionFailed("‖u‖ exceeds ε".into()));
        }
        let origin = self.point(u, &[]);
        let obj = BallObjective {
            model: &self.model,
            origin,
            map: self.v_basis.clone(),
            tilt: self.z_bar_v_full(),
            prox: None,
        };
        let run = minimize_in_ball(&obj, self.eps_v, &self.solver);
        let (y, _) = run.selection(S::lit(1e-12));
        let x = self.point(u, &y);
        let f_value = self.model.value(&x);
        let value = self.objective(u, &y);
        Ok(LagrangianPoint {
            u: u.to_vec(),
            boundary_active: self.dim_v() > 0 && norm(&y) >= self.eps_v * (S::one() - S::lit(1e-9)),
            v: y,
            x,
            value,
            f_value,
            approximate: run.budget_exceeded(),
        })
    }

    /// `L^ε(u)`; `+∞` outside the `U′`-ball.
    pub fn l_eps(&self, u: &[S]) -> Result<S> {
        if norm(u) > self.eps_u() {
            return Ok(S::infinity());
        }
        Ok(self.v_of_u(u)?.value)
    }

    /// `k_v(u) = h(u+v(u)) − ⟨z̄_V′, u+v(u)⟩` with `h(w) = f(x̄+w)`; `z̄_V′ ⊥ u`,
    /// so this is evaluated on the same path as [`Self::l_eps`].
    pub fn k_v(&self, u: &[S]) -> Result<S> {
        self.l_eps(u)
    }

    /// Central-difference gradient of `L`, cross-validated against
    /// `(z_U, z̄_V′) ∈ co ∂f(x̄+u+v(u))`.
    pub fn grad_l(&self, u: &[S], fd_step: Option<S>) -> Result<GradientEstimate<S>> {
        let k = self.dim_u();
        let h = fd_step.unwrap_or_else(|| S::lit(1e-5) * (S::one() + norm(u)));
        if norm(u) + h > self.eps_u() {
            return Err(Error::PreconditionFailed("gradient stencil leaves the U-ball".into()));
        }
        let mut z_u = vec![S::zero(); k];
        for i in 0..k {
            let mut up = u.to_vec();
            let mut dn = u.to_vec();
            up[i] = up[i] + h;
            dn[i] = dn[i] - h;
            z_u[i] = (self.l_eps(&up)? - self.l_eps(&dn)?) / (S::lit(2.0) * h);
        }
        let center = self.v_of_u(u)?;
        let mut z_full = self.z_bar_v_full();
        if k > 0 {
            for (zi, d) in z_full.iter_mut().zip(self.u_basis.mul_vec(&z_u)) {
                *zi = *zi + d;
            }
        }
        let poly = self.model.subdifferential_polytope(&center.x, S::lit(CROSS_CHECK_TAU))?;
        let distance = poly.distance_to(&z_full);
        if distance > S::lit(CROSS_CHECK_TOL) {
            return Err(Error::InconsistentGradient { fd: to_f64_vec(&z_u), distance: distance.to_f64_lossy() });
        }
        Ok(GradientEstimate { z_u, distance, point: center })
    }

    /// `L` on a per-axis lattice of `[−r, r]^k`, evaluated in parallel.
    pub fn sample_grid(&self, radius: S, per_axis: usize) -> Result<Vec<LagrangianPoint<S>>> {
        let k = self.dim_u();
        let nodes = box_lattice(&vec![-radius; k], &vec![radius; k], per_axis);
        nodes.par_iter().map(|u| self.v_of_u(u)).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientEstimate<S> {
    pub z_u: Vec<S>,
    /// Distance of `(z_U, z̄_V′)` to `co ∂f(x̄+u+v(u))`.
    pub distance: S,
    pub point: LagrangianPoint<S>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvexityReport<S> {
    /// `max L((a+b)/2) − (L(a)+L(b))/2` over grid pairs with grid midpoints.
    pub worst_violation: S,
    /// `1 + max |L|` over the grid.
    pub scale: S,
    pub pairs: usize,
}

impl<S: Scalar> ConvexityReport<S> {
    pub fn passes(&self, rel_tol: S) -> bool {
        self.worst_violation <= rel_tol * self.scale
    }
}

/// Midpoint convexity of `L` on the `per_axis` lattice of `[−r, r]^k`.
pub fn convexity_check<S: Scalar>(ctx: &ULagContext<S>, radius: S, per_axis: usize) -> Result<ConvexityReport<S>> {
    let k = ctx.dim_u();
    let pts = ctx.sample_grid(radius, per_axis)?;
    let values: Vec<S> = pts.iter().map(|p| p.value).collect();
    let scale = S::one() + values.iter().fold(S::zero(), |m, v| m.max(v.abs()));
    let index = |flat: usize| -> Vec<usize> {
        let mut idx = vec![0; k];
        let mut rem = flat;
        for a in (0..k).rev() {
            idx[a] = rem % per_axis;
            rem /= per_axis;
        }
        idx
    };
    let flat = |idx: &[usize]| idx.iter().fold(0, |acc, &i| acc * per_axis + i);
    let mut worst = S::neg_infinity();
    let mut pairs = 0;
    for a in 0..values.len() {
        let ia = index(a);
        for b in (a + 1)..values.len() {
            let ib = index(b);
            if ia.iter().zip(&ib).any(|(x, y)| (x + y) % 2 != 0) {
                continue;
            }
            let mid: Vec<usize> = ia.iter().zip(&ib).map(|(x, y)| (x + y) / 2).collect();
            let m = values[flat(&mid)];
            worst = worst.max(m - (values[a] + values[b]) * S::lit(0.5));
            pairs += 1;
        }
    }
    if pairs == 0 {
        worst = S::zero();
    }
    Ok(ConvexityReport { worst_violation: worst, scale, pairs })
}

/// `max ‖v(u)‖/‖u‖` over 16 directions at each radius.
pub fn little_oh_check<S: Scalar>(ctx: &ULagContext<S>, radii: &[S]) -> Result<Vec<(S, S)>> {
    let k = ctx.dim_u();
    let dirs: Vec<Vec<S>> = sphere_directions(k, 16);
    radii
        .iter()
        .map(|&r| {
            let mut worst = S::zero();
            for d in &dirs {
                let u: Vec<S> = d.iter().map(|&x| x * r).collect();
                let p = ctx.v_of_u(&u)?;
                worst = worst.max(norm(&p.v) / r);
            }
            Ok((r, worst))
        })
        .collect()
}

/// `min L(u′) − L(u) − ⟨z_U(u), u′ − u⟩` over all grid pairs, with `z_U`
/// from [`ULagContext::grad_l`] at the interior nodes.
pub fn subgradient_inequality_check<S: Scalar>(ctx: &ULagContext<S>, radius: S, per_axis: usize) -> Result<S> {
    let pts = ctx.sample_grid(radius, per_axis)?;
    let grads: Vec<Option<Vec<S>>> = pts
        .par_iter()
        .map(|p| match ctx.grad_l(&p.u, None) {
            Ok(g) => Ok(Some(g.z_u)),
            // the stencil does not fit around nodes on the ball boundary
            Err(Error::PreconditionFailed(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let mut worst = S::infinity();
    for (p, g) in pts.iter().zip(&grads) {
        let Some(g) = g else { continue };
        for q in &pts {
            let lin: S = g.iter().zip(q.u.iter().zip(&p.u)).map(|(&gi, (&a, &b))| gi * (a - b)).sum();
            worst = worst.min(q.value - p.value - lin);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::builtin;

    fn ctx(name: &str, eps: f64) -> ULagContext<f64> {
        ULagContext::at_base(builtin(name).unwrap(), eps, SolverConfig::default()).unwrap()
    }

    #[test]
    fn abs_plus_quad_closed_form() {
        let c = ctx("abs_plus_quad", 1.0);
        let p = c.v_of_u(&[0.3]).unwrap();
        assert!(p.v[0].abs() < 1e-12);
        assert!((p.value - 0.09).abs() < 1e-12);
        assert!((c.k_v(&[0.3]).unwrap() - p.value).abs() == 0.0);
        let g = c.grad_l(&[0.3], None).unwrap();
        assert!((g.z_u[0] - 0.6).abs() < 1e-8);
        assert_eq!(c.l_eps(&[1.5]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn crossing_selection() {
        let c = ctx("crossing_max", 0.5);
        assert_eq!(c.frame.z_bar, vec![0.0, 0.0]);
        let p = c.v_of_u(&[0.1]).unwrap();
        let exact = (5f64.sqrt() - (5.0 - 0.04f64).sqrt()) / 2.0;
        assert!((p.v[0].abs() - exact).abs() < 1e-12);
        let g = c.grad_l(&[0.1], None).unwrap();
        let sign = c.u_basis[(0, 0)];
        assert!((g.z_u[0] * sign - 0.2 / (5.0 - 0.04f64).sqrt()).abs() < 1e-7);
    }

    #[test]
    fn origin_of_stable_minimum() {
        let c = ctx("abs_plus_quad", 1.0);
        let p = c.v_of_u(&[0.0]).unwrap();
        assert_eq!(p.v, vec![0.0]);
        assert_eq!(p.value, 0.0);
    }

    #[test]
    fn u_prime_must_lie_in_u() {
        let c = ctx("abs_diff", 1.0);
        let bad = Matrix::from_columns(2, &[vec![1.0, 0.0]]);
        assert!(c.with_u_prime(bad).is_err());
    }

    #[test]
    fn crossing_little_oh() {
        let c = ctx("crossing_max", 0.5);
        let r = little_oh_check(&c, &[1e-1, 1e-2, 1e-3]).unwrap();
        assert!(r[0].1 > r[1].1 && r[1].1 > r[2].1);
        assert!((r[2].1 - 1e-3 / 5f64.sqrt()).abs() < 1e-5);
    }

    #[test]
    fn quadratic_full_space_convexity() {
        let c = ctx("quadratic(I)", 1.0);
        assert_eq!(c.dim_u(), 2);
        let r = convexity_check(&c, 0.5, 9).unwrap();
        assert!(r.passes(1e-9));
    }
}
