//! Second-order objects: `Δ₂` quotients, Dini second derivatives, rank-one
//! supports of the limiting subhessian, subjet membership, limiting
//! Hessians, Moreau envelopes and the conjugate Hessian duality.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::envelope::{refined_conjugate_at, GridFunction};
use crate::error::{Error, Result};
use crate::lattice::{cube_directions, geometric, sphere_directions};
use crate::linalg::{dot, inverse, norm, orthonormal_span, projector, sub, sym_eigen, Matrix};
use crate::oracle::{FunctionModel, DEFAULT_ACTIVE_TOL};
use crate::scalar::Scalar;
use crate::search::{minimize_in_ball, BallObjective, SolverConfig};
use crate::vu::decompose;

/// `Δ₂f(x, t, z, u) = 2[f(x+tu) − f(x) − t⟨z,u⟩]/t²`.
pub fn delta2<S: Scalar>(model: &FunctionModel<S>, x: &[S], z: &[S], t: S, u: &[S]) -> S {
    let moved: Vec<S> = x.iter().zip(u).map(|(&a, &b)| a + t * b).collect();
    let fm = model.value(&moved);
    if !fm.is_finite() {
        return S::infinity();
    }
    S::lit(2.0) * (fm - model.value(x) - t * dot(z, u)) / (t * t)
}

/// Schedule and classification settings shared by the quotient routines.
#[derive(Debug, Clone, Serialize)]
pub struct Rank1Config<S> {
    pub t_grid: Vec<S>,
    /// Perturbed directions per shell.
    pub ball_directions: usize,
    /// Perturbation radius is `ball_scale · t`.
    pub ball_scale: S,
    pub divergence_threshold: S,
}

impl<S: Scalar> Default for Rank1Config<S> {
    fn default() -> Self {
        Rank1Config {
            t_grid: geometric(S::lit(1e-1), S::lit(1e-4), S::lit(0.5)),
            ball_directions: 16,
            ball_scale: S::lit(0.1),
            divergence_threshold: S::lit(1e3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiniShell<S> {
    pub t: S,
    /// Quotient along the unperturbed direction.
    pub direct: S,
    /// Minimum over the perturbed directions of the shell.
    pub ball_min: S,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiniTrace<S> {
    pub value: S,
    pub divergent: bool,
    pub shells: Vec<DiniShell<S>>,
}

/// Approximates `f″₋(x, z, h)`: on each shell the quotient is taken along
/// `h` and along `h + ball_scale·t·d` rescaled to `‖h‖`. The reported value
/// is the finest direct quotient; divergence requires the finest ball
/// minimum to exceed the threshold with the three finest shells increasing.
pub fn dini_second<S: Scalar>(model: &FunctionModel<S>, x: &[S], z: &[S], h: &[S], cfg: &Rank1Config<S>) -> DiniTrace<S> {
    let n = h.len();
    let hn = norm(h);
    let fan: Vec<Vec<S>> = sphere_directions(n, cfg.ball_directions);
    let shells: Vec<DiniShell<S>> = cfg
        .t_grid
        .iter()
        .map(|&t| {
            let direct = delta2(model, x, z, t, h);
            let mut ball_min = direct;
            for d in &fan {
                let p: Vec<S> = h.iter().zip(d).map(|(&a, &b)| a + cfg.ball_scale * t * b).collect();
                let pn = norm(&p);
                if pn == S::zero() {
                    continue;
                }
                let p: Vec<S> = p.iter().map(|&v| v * hn / pn).collect();
                ball_min = ball_min.min(delta2(model, x, z, t, &p));
            }
            DiniShell { t, direct, ball_min }
        })
        .collect();
    let k = shells.len();
    let divergent = k >= 3 && shells[k - 1].ball_min > cfg.divergence_threshold && {
        let tail = &shells[k - 3..];
        tail[0].ball_min < tail[1].ball_min && tail[1].ball_min < tail[2].ball_min
    };
    let value = if divergent { S::infinity() } else { shells.last().map_or(S::nan(), |s| s.direct) };
    DiniTrace { value, divergent, shells }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum RankOneValue<S> {
    Finite(S),
    Divergent,
}

impl<S: Scalar> RankOneValue<S> {
    pub fn finite(&self) -> Option<S> {
        match self {
            RankOneValue::Finite(v) => Some(*v),
            RankOneValue::Divergent => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, RankOneValue::Finite(_))
    }
}

/// `min{f″₋(x,z,h), f″₋(x,z,−h)}` at a single pair `(x, z)`.
pub fn rank1_pointwise<S: Scalar>(model: &FunctionModel<S>, x: &[S], z: &[S], h: &[S], cfg: &Rank1Config<S>) -> RankOneValue<S> {
    let neg: Vec<S> = h.iter().map(|&v| -v).collect();
    let a = dini_second(model, x, z, h, cfg);
    let b = dini_second(model, x, z, &neg, cfg);
    match (a.divergent, b.divergent) {
        (true, true) => RankOneValue::Divergent,
        (false, true) => RankOneValue::Finite(a.value),
        (true, false) => RankOneValue::Finite(b.value),
        (false, false) => RankOneValue::Finite(a.value.min(b.value)),
    }
}

/// Pairs `(x_k, z_k)` near `(x̄, z̄)` with `z_k ∈ co ∂f(x_k)`: the base pair
/// and, at `x̄` and `x̄ + 10⁻³d` for 16 directions `d`, the projection `p` of
/// `z̄` onto `co ∂f(x_k)` and the points `p + ¼(g − p)` toward each generator
/// `g`, kept when within `0.5` of `z̄`.
pub fn attentive_probes<S: Scalar>(model: &FunctionModel<S>, x_bar: &[S], z_bar: &[S]) -> Vec<(Vec<S>, Vec<S>)> {
    let n = x_bar.len();
    let mut bases = vec![x_bar.to_vec()];
    for d in sphere_directions::<S>(n, 16) {
        bases.push(x_bar.iter().zip(&d).map(|(&a, &b)| a + S::lit(1e-3) * b).collect());
    }
    let mut probes: Vec<(Vec<S>, Vec<S>)> = vec![(x_bar.to_vec(), z_bar.to_vec())];
    for x in &bases {
        let gens = match model.subdifferential_polytope(x, S::lit(DEFAULT_ACTIVE_TOL)) {
            Ok(p) => p.generators().to_vec(),
            Err(_) => match model_gradient(model, x) {
                Some(g) => vec![g],
                None => continue,
            },
        };
        let p = crate::hull::project_onto_hull(&gens, z_bar).point;
        let mut zs = vec![p.clone()];
        for g in &gens {
            zs.push(p.iter().zip(g).map(|(&a, &b)| a + S::lit(0.25) * (b - a)).collect());
        }
        for z in zs {
            let dup = probes.iter().any(|(px, pz)| px == x && norm(&sub(pz, &z)) < S::lit(1e-14));
            if !dup && norm(&sub(&z, z_bar)) <= S::lit(0.5) {
                probes.push((x.clone(), z));
            }
        }
    }
    probes
}

/// `q(∂̲²f(x̄,z̄))(h)`: the largest pointwise value over [`attentive_probes`],
/// divergent when any probe diverges along both `h` and `−h`.
pub fn rank1_support<S: Scalar>(model: &FunctionModel<S>, x: &[S], z: &[S], h: &[S], cfg: &Rank1Config<S>) -> RankOneValue<S> {
    rank1_over(model, &attentive_probes(model, x, z), h, cfg)
}

fn rank1_over<S: Scalar>(model: &FunctionModel<S>, probes: &[(Vec<S>, Vec<S>)], h: &[S], cfg: &Rank1Config<S>) -> RankOneValue<S> {
    let mut best = S::neg_infinity();
    for (x, z) in probes {
        match rank1_pointwise(model, x, z, h, cfg) {
            RankOneValue::Divergent => return RankOneValue::Divergent,
            RankOneValue::Finite(v) => best = best.max(v),
        }
    }
    RankOneValue::Finite(best)
}

/// Rank-one support sampled on a direction set.
#[derive(Debug, Clone, Serialize)]
pub struct RankOneProfile<S> {
    pub directions: Vec<Vec<S>>,
    pub values: Vec<RankOneValue<S>>,
    pub divergence_threshold: S,
    pub t_grid: Vec<S>,
}

impl<S: Scalar> RankOneProfile<S> {
    pub fn compute(model: &FunctionModel<S>, x: &[S], z: &[S], directions: Vec<Vec<S>>, cfg: &Rank1Config<S>) -> Self {
        let probes = attentive_probes(model, x, z);
        let values = directions.par_iter().map(|h| rank1_over(model, &probes, h, cfg)).collect();
        RankOneProfile { directions, values, divergence_threshold: cfg.divergence_threshold, t_grid: cfg.t_grid.clone() }
    }

    pub fn finite_directions(&self) -> Vec<(Vec<S>, S)> {
        self.directions
            .iter()
            .zip(&self.values)
            .filter_map(|(d, v)| v.finite().map(|q| (d.clone(), q)))
            .collect()
    }

    /// `direction…,classification,value` rows; divergent rows carry `inf`.
    pub fn to_csv(&self) -> String {
        let n = self.directions.first().map_or(0, Vec::len);
        let mut out: String = (0..n).map(|i| format!("h{i},")).collect();
        out.push_str("classification,value\n");
        for (d, v) in self.directions.iter().zip(&self.values) {
            for c in d {
                out.push_str(&format!("{},", c.to_f64_lossy()));
            }
            match v {
                RankOneValue::Finite(q) => out.push_str(&format!("finite,{}\n", q.to_f64_lossy())),
                RankOneValue::Divergent => out.push_str("divergent,inf\n"),
            }
        }
        out
    }
}

/// Direction sample: the sphere fan plus the normalized `{−1,0,1}ⁿ` vectors.
pub fn default_directions<S: Scalar>(n: usize) -> Vec<Vec<S>> {
    let mut dirs: Vec<Vec<S>> = sphere_directions(n, 64);
    for c in cube_directions::<S>(n) {
        if !dirs.iter().any(|d| d.iter().zip(&c).all(|(&a, &b)| (a - b).abs() < S::lit(1e-12))) {
            dirs.push(c);
        }
    }
    dirs
}

/// `(x, z, Q)`: a candidate element of the second-order subjet at `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct JetCandidate<S> {
    pub x: Vec<S>,
    pub z: Vec<S>,
    pub q: Matrix<S>,
}

impl<S: Scalar> JetCandidate<S> {
    pub fn new(x: Vec<S>, z: Vec<S>, q: Matrix<S>) -> Result<Self> {
        if q.asymmetry() > S::lit(1e-12) {
            return Err(Error::PreconditionFailed("Q is not symmetric".into()));
        }
        Ok(JetCandidate { x, z, q })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MembershipConfig<S> {
    pub radii: Vec<S>,
    pub directions: usize,
    /// `η(ρ) = slack_coeff·√ρ + noise·(1+|f(x)|)/ρ²`.
    pub slack_coeff: S,
    pub noise: S,
}

impl<S: Scalar> Default for MembershipConfig<S> {
    fn default() -> Self {
        MembershipConfig {
            radii: geometric(S::lit(1e-1), S::lit(1e-4), S::lit(0.1)),
            directions: 64,
            slack_coeff: S::lit(1e-2),
            noise: S::lit(10.0) * S::epsilon(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Membership<S> {
    Member,
    Rejected { witness: Vec<S>, margin: S },
    Inconclusive,
}

impl<S> Membership<S> {
    pub fn is_member(&self) -> bool {
        matches!(self, Membership::Member)
    }

    pub fn is_rejected(&self) -> bool {
        matches!(self, Membership::Rejected { .. })
    }
}

/// Tests `f(x+d) − f(x) − ⟨z,d⟩ − ½dᵀQd ≥ −η(ρ)ρ²` on spheres `‖d‖ = ρ`.
/// Member when the two finest shells pass everywhere; rejected when one
/// direction fails on both; inconclusive otherwise.
pub fn subjet_membership<S: Scalar>(model: &FunctionModel<S>, cand: &JetCandidate<S>, cfg: &MembershipConfig<S>) -> Membership<S> {
    let n = cand.x.len();
    let dirs: Vec<Vec<S>> = if n == 2 { sphere_directions(n, cfg.directions) } else { default_directions(n) };
    let fx = model.value(&cand.x);
    let half = S::lit(0.5);
    // worst normalized margin per shell and direction
    let shells: Vec<Vec<S>> = cfg
        .radii
        .iter()
        .map(|&rho| {
            let eta = cfg.slack_coeff * rho.sqrt() + cfg.noise * (S::one() + fx.abs()) / (rho * rho);
            dirs.iter()
                .map(|h| {
                    let d: Vec<S> = h.iter().map(|&v| v * rho).collect();
                    let xd: Vec<S> = cand.x.iter().zip(&d).map(|(&a, &b)| a + b).collect();
                    let m = model.value(&xd) - fx - dot(&cand.z, &d) - half * cand.q.quad_form(&d);
                    m / (rho * rho) + eta
                })
                .collect()
        })
        .collect();
    let k = shells.len();
    if k < 2 {
        return Membership::Inconclusive;
    }
    let (a, b) = (&shells[k - 2], &shells[k - 1]);
    if a.iter().chain(b).all(|&m| m >= S::zero()) {
        return Membership::Member;
    }
    let mut worst: Option<(usize, S)> = None;
    for i in 0..dirs.len() {
        if a[i] < S::zero() && b[i] < S::zero() {
            let m = a[i].max(b[i]);
            if worst.map_or(true, |(_, w)| m < w) {
                worst = Some((i, m));
            }
        }
    }
    match worst {
        Some((i, margin)) => Membership::Rejected { witness: dirs[i].clone(), margin },
        None => Membership::Inconclusive,
    }
}

/// `U²` with the evidence behind it.
#[derive(Debug, Clone, Serialize)]
pub struct SecondOrderComponent<S> {
    #[serde(skip)]
    pub u2_basis: Matrix<S>,
    #[serde(skip)]
    pub u_basis: Matrix<S>,
    pub profile: RankOneProfile<S>,
    /// Sine of the largest principal angle between `U²` and its projection on `U`.
    pub containment_gap: S,
    pub midpoints_checked: usize,
}

/// Classifies directions, spans the finite ones and checks that the span is
/// a subspace on which every sampled direction is finite, and that it lies
/// inside `U`.
pub fn second_order_component<S: Scalar>(
    model: &FunctionModel<S>,
    x_bar: &[S],
    z_bar: &[S],
    directions: Vec<Vec<S>>,
    cfg: &Rank1Config<S>,
) -> Result<SecondOrderComponent<S>> {
    let n = x_bar.len();
    let poly = model.subdifferential_polytope(x_bar, S::lit(DEFAULT_ACTIVE_TOL))?;
    if !poly.contains_relative_interior(z_bar, S::lit(1e-8)) {
        return Err(Error::PreconditionFailed("z̄ is not in the relative interior of co ∂f(x̄)".into()));
    }
    let frame = decompose(&poly, z_bar, S::lit(1e-8))?;
    let profile = RankOneProfile::compute(model, x_bar, z_bar, directions, cfg);
    let finite: Vec<Vec<S>> = profile.finite_directions().into_iter().map(|(d, _)| d).collect();
    let u2 = orthonormal_span(n, &finite, S::lit(1e-6));
    let proj = projector(&u2);
    for (d, v) in profile.directions.iter().zip(&profile.values) {
        let inside = norm(&sub(&proj.mul_vec(d), d)) <= S::lit(1e-9);
        if inside && !v.is_finite() {
            return Err(Error::NotASubspace(format!("direction {:?} lies in the span but diverges", d)));
        }
    }
    let picks: Vec<&Vec<S>> = finite.iter().take(24).collect();
    let mut mids = Vec::new();
    for i in 0..picks.len() {
        for j in (i + 1)..picks.len() {
            let m: Vec<S> = picks[i].iter().zip(picks[j]).map(|(&a, &b)| a + b).collect();
            let mn = norm(&m);
            if mn > S::lit(1e-6) {
                mids.push(m.iter().map(|&v| v / mn).collect::<Vec<S>>());
            }
        }
    }
    let probes = attentive_probes(model, x_bar, z_bar);
    let bad = mids.par_iter().find_any(|m| !rank1_over(model, &probes, m, cfg).is_finite());
    if let Some(m) = bad {
        return Err(Error::NotASubspace(format!("midpoint direction {:?} diverges", m)));
    }
    let pu = projector(&frame.u_basis);
    let containment_gap = u2
        .columns()
        .iter()
        .map(|b| norm(&sub(&pu.mul_vec(b), b)))
        .fold(S::zero(), S::max);
    Ok(SecondOrderComponent {
        u2_basis: u2,
        u_basis: frame.u_basis.clone(),
        profile,
        containment_gap,
        midpoints_checked: mids.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianSource {
    Analytic,
    FiniteDifference,
    Moreau,
}

#[derive(Debug, Clone)]
pub struct HessianBundle<S> {
    pub samples: Vec<(Vec<S>, Matrix<S>)>,
    pub source: HessianSource,
}

#[derive(Debug, Clone)]
pub struct BundleConfig<S> {
    pub radii: Vec<S>,
    pub directions: usize,
    /// Admissible samples satisfy `‖∇f(x_k) − z̄‖ ≤ gradient_tol`.
    pub gradient_tol: S,
}

impl<S: Scalar> Default for BundleConfig<S> {
    fn default() -> Self {
        BundleConfig { radii: vec![S::lit(1e-1), S::lit(1e-2), S::lit(1e-3)], directions: 16, gradient_tol: S::lit(0.5) }
    }
}

fn fd_step<S: Scalar>(x: &[S]) -> S {
    S::lit(1e-4) * (S::one() + norm(x))
}

/// Central-difference gradient from values.
pub fn fd_gradient<S: Scalar>(model: &FunctionModel<S>, x: &[S]) -> Vec<S> {
    let h = fd_step(x);
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] = p[i] + h;
            m[i] = m[i] - h;
            (model.value(&p) - model.value(&m)) / (S::lit(2.0) * h)
        })
        .collect()
}

/// Symmetrized finite-difference Hessian, from the gradient oracle when
/// present and from values otherwise.
pub fn fd_hessian<S: Scalar>(model: &FunctionModel<S>, x: &[S]) -> Matrix<S> {
    let n = x.len();
    let h = fd_step(x);
    let two = S::lit(2.0);
    let mut m = Matrix::zeros(n, n);
    if model.has_gradient_oracle() {
        for j in 0..n {
            let mut p = x.to_vec();
            let mut q = x.to_vec();
            p[j] = p[j] + h;
            q[j] = q[j] - h;
            let gp = model.gradient(&p, S::zero()).expect("gradient oracle");
            let gq = model.gradient(&q, S::zero()).expect("gradient oracle");
            for i in 0..n {
                m[(i, j)] = (gp[i] - gq[i]) / (two * h);
            }
        }
    } else {
        let f0 = model.value(x);
        let at = |di: usize, si: S, dj: usize, sj: S| {
            let mut p = x.to_vec();
            p[di] = p[di] + si * h;
            p[dj] = p[dj] + sj * h;
            model.value(&p)
        };
        for i in 0..n {
            let mut p = x.to_vec();
            let mut q = x.to_vec();
            p[i] = p[i] + h;
            q[i] = q[i] - h;
            m[(i, i)] = (model.value(&p) - two * f0 + model.value(&q)) / (h * h);
            for j in (i + 1)..n {
                let one = S::one();
                let v = (at(i, one, j, one) - at(i, one, j, -one) - at(i, -one, j, one) + at(i, -one, j, -one))
                    / (S::lit(4.0) * h * h);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
    }
    m.symmetrized()
}

fn model_gradient<S: Scalar>(model: &FunctionModel<S>, x: &[S]) -> Option<Vec<S>> {
    if model.is_structured() {
        model.gradient(x, S::lit(DEFAULT_ACTIVE_TOL))
    } else if model.has_gradient_oracle() {
        model.gradient(x, S::zero())
    } else {
        Some(fd_gradient(model, x))
    }
}

/// Hessians at sample points `x_k = x̄ + r·d` where `f` is differentiable
/// with `∇f(x_k)` near `z̄`.
pub fn limiting_hessians<S: Scalar>(model: &FunctionModel<S>, x_bar: &[S], z_bar: &[S], cfg: &BundleConfig<S>) -> Result<HessianBundle<S>> {
    let n = x_bar.len();
    let source = if model.is_structured() {
        HessianSource::Analytic
    } else if model.name().starts_with("moreau(") {
        HessianSource::Moreau
    } else {
        HessianSource::FiniteDifference
    };
    let dirs: Vec<Vec<S>> = sphere_directions(n, cfg.directions);
    let mut points = Vec::new();
    for &r in &cfg.radii {
        for d in &dirs {
            points.push(x_bar.iter().zip(d).map(|(&a, &b)| a + r * b).collect::<Vec<S>>());
        }
    }
    let samples: Vec<(Vec<S>, Matrix<S>)> = points
        .par_iter()
        .filter_map(|x| {
            let g = model_gradient(model, x)?;
            if norm(&sub(&g, z_bar)) > cfg.gradient_tol {
                return None;
            }
            let h = match source {
                HessianSource::Analytic => model.piece_hessian(x, S::lit(DEFAULT_ACTIVE_TOL))?,
                _ => fd_hessian(model, x),
            };
            Some((x.clone(), h.symmetrized()))
        })
        .collect();
    if samples.is_empty() {
        return Err(Error::EmptyBundle);
    }
    Ok(HessianBundle { samples, source })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoderivativeImage<S> {
    pub images: Vec<Vec<S>>,
    /// `max_k hᵀQ_k h`, the support of the hull of images at `h`.
    pub support: S,
}

/// `{Q h : Q in the bundle}`.
pub fn coderivative_c11<S: Scalar>(bundle: &HessianBundle<S>, h: &[S]) -> CoderivativeImage<S> {
    let images: Vec<Vec<S>> = bundle.samples.iter().map(|(_, q)| q.mul_vec(h)).collect();
    let support = bundle.samples.iter().map(|(_, q)| q.quad_form(h)).fold(S::neg_infinity(), S::max);
    CoderivativeImage { images, support }
}

/// `min over unit h and samples of hᵀQh`.
pub fn tilt_criterion_c11<S: Scalar>(bundle: &HessianBundle<S>, directions: &[Vec<S>]) -> S {
    let mut best = S::infinity();
    for (_, q) in &bundle.samples {
        for h in directions {
            let hn = norm(h);
            if hn > S::zero() {
                best = best.min(q.quad_form(h) / (hn * hn));
            }
        }
        // the exact minimum over the sphere is the smallest eigenvalue
        let (eig, _) = sym_eigen(q);
        if let Some(&lo) = eig.first() {
            best = best.min(lo);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoreauPoint<S> {
    pub value: S,
    pub prox: Vec<S>,
    pub gradient: Vec<S>,
}

/// `f_λ(x) = min_u f(u) + ‖x−u‖²/(2λ)` by ball multistart around `x`,
/// enlarging the ball while the minimizer sits on its boundary.
pub fn moreau_envelope<S: Scalar>(model: &FunctionModel<S>, lambda: S, x: &[S], cfg: &SolverConfig<S>) -> Result<MoreauPoint<S>> {
    if lambda <= S::zero() {
        return Err(Error::PreconditionFailed("λ must be positive".into()));
    }
    if let Some(q) = model.flags().quadratic_minorant {
        if q.r * lambda >= S::one() {
            return Err(Error::LambdaTooLarge(format!("R·λ = {} ≥ 1", (q.r * lambda).to_f64_lossy())));
        }
    }
    let slope = match model.subdifferential_polytope(x, S::lit(DEFAULT_ACTIVE_TOL)) {
        Ok(p) => p.generators().iter().map(|g| norm(g)).fold(S::zero(), S::max),
        Err(_) => norm(&fd_gradient(model, x)),
    };
    let n = x.len();
    let obj = BallObjective {
        model,
        origin: x.to_vec(),
        map: Matrix::identity(n),
        tilt: vec![S::zero(); n],
        prox: Some((x.to_vec(), lambda)),
    };
    let mut radius = S::lit(2.0) * lambda * (slope + S::one());
    for _ in 0..4 {
        let res = minimize_in_ball(&obj, radius, cfg);
        let best = res.best();
        if norm(&best.y) < radius * S::lit(0.999) {
            let prox = obj.point(&best.y);
            let gradient: Vec<S> = x.iter().zip(&prox).map(|(&a, &b)| (a - b) / lambda).collect();
            return Ok(MoreauPoint { value: best.value, prox, gradient });
        }
        radius = radius * S::lit(4.0);
    }
    Err(Error::LambdaTooLarge(format!("minimizer escapes every ball up to radius {}", radius.to_f64_lossy())))
}

/// `f_λ` as a custom model with gradient `(x − prox)/λ`.
pub fn moreau_model<S: Scalar>(model: &FunctionModel<S>, lambda: S, cfg: SolverConfig<S>) -> FunctionModel<S> {
    let m = Arc::new(model.clone());
    let (mv, cv) = (m.clone(), cfg.clone());
    let value = Arc::new(move |x: &[S]| moreau_envelope(&mv, lambda, x, &cv).map_or(S::nan(), |p| p.value));
    let (mg, cg) = (m.clone(), cfg);
    let gradient = Arc::new(move |x: &[S]| {
        moreau_envelope(&mg, lambda, x, &cg).map_or_else(|_| vec![S::nan(); x.len()], |p| p.gradient)
    });
    let mut flags = *model.flags();
    flags.quadratic_minorant = flags.quadratic_minorant.map(|mut q| {
        q.r = q.r / (S::one() - q.r * lambda);
        q
    });
    FunctionModel::custom(format!("moreau({}, {})", model.name(), lambda), model.dim(), value, flags)
        .with_gradient(gradient)
        .with_base_point(model.base_point().to_vec())
}

/// Worst midpoint violation of `φ(h) = q(h) + r‖h‖²` over pairs of finite
/// directions whose midpoint is parallel to a finite direction, using
/// `q(s·h) = s²q(h)`.
pub fn para_convexity_check<S: Scalar>(profile: &RankOneProfile<S>, r: S) -> S {
    let finite = profile.finite_directions();
    let phi = |q: S, h2: S| q + r * h2;
    let mut worst = S::zero();
    for (i, (a, qa)) in finite.iter().enumerate() {
        for (b, qb) in finite.iter().skip(i + 1) {
            let m: Vec<S> = a.iter().zip(b).map(|(&p, &q)| (p + q) * S::lit(0.5)).collect();
            let mn = norm(&m);
            if mn < S::lit(1e-9) {
                continue;
            }
            let unit: Vec<S> = m.iter().map(|&v| v / mn).collect();
            let Some((_, qm)) = finite.iter().find(|(d, _)| norm(&sub(d, &unit)) < S::lit(1e-9)) else {
                continue;
            };
            let lhs = phi(*qm * mn * mn, mn * mn);
            let rhs = S::lit(0.5) * (phi(*qa, dot(a, a)) + phi(*qb, dot(b, b)));
            worst = worst.max(lhs - rhs);
        }
    }
    worst
}

#[derive(Debug, Clone)]
pub struct DualityReport<S> {
    pub residual: S,
    pub hessian: Matrix<S>,
    pub conjugate_hessian: Matrix<S>,
    pub z_bar: Vec<S>,
}

/// Compares `∇²f*(∇f(x̄))`, obtained from second differences of the refined
/// discrete conjugate with dual step `dz`, against `∇²f(x̄)⁻¹`.
pub fn hessian_duality_check<S: Scalar>(model: &FunctionModel<S>, x_bar: &[S], resolution: usize, dz: S) -> Result<DualityReport<S>> {
    let n = x_bar.len();
    if n > 3 {
        return Err(Error::DimensionTooLarge(n));
    }
    if !model.flags().convex {
        return Err(Error::PreconditionFailed("model is not flagged convex".into()));
    }
    let q = match model.piece_hessian(x_bar, S::lit(DEFAULT_ACTIVE_TOL)) {
        Some(h) if model.is_structured() => h.symmetrized(),
        _ => fd_hessian(model, x_bar),
    };
    let (eig, _) = sym_eigen(&q);
    let lo = eig.first().copied().unwrap_or(S::zero());
    if lo <= S::lit(1e-10) * (S::one() + q.max_abs()) {
        return Err(Error::SingularHessian(lo.to_f64_lossy()));
    }
    let qinv = inverse(&q).ok_or(Error::SingularHessian(lo.to_f64_lossy()))?;
    let z_bar = model_gradient(model, x_bar).ok_or_else(|| Error::PreconditionFailed("f is not differentiable at x̄".into()))?;
    // the maximizers for |z − z̄| ≤ 2dz stay well inside the box
    let spread = eig.last().copied().map_or(S::one(), |_| S::one() / lo);
    let half = (S::lit(8.0) * dz * spread).max(S::lit(0.1));
    let lower: Vec<S> = x_bar.iter().map(|&c| c - half).collect();
    let upper: Vec<S> = x_bar.iter().map(|&c| c + half).collect();
    let gf = GridFunction::sample(lower, upper, resolution, |x: &[S]| model.value(x));
    let nodes = gf.nodes();
    let conj = |offs: &[(usize, S)]| {
        let mut z = z_bar.clone();
        for &(i, s) in offs {
            z[i] = z[i] + s * dz;
        }
        refined_conjugate_at(&gf, &nodes, &z)
    };
    let one = S::one();
    let c0 = conj(&[]);
    let mut h = Matrix::zeros(n, n);
    for i in 0..n {
        h[(i, i)] = (conj(&[(i, one)]) - c0 - c0 + conj(&[(i, -one)])) / (dz * dz);
        for j in (i + 1)..n {
            let v = (conj(&[(i, one), (j, one)]) - conj(&[(i, one), (j, -one)]) - conj(&[(i, -one), (j, one)])
                + conj(&[(i, -one), (j, -one)]))
                / (S::lit(4.0) * dz * dz);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(DualityReport { residual: h.sub(&qinv).frobenius_norm(), hessian: q, conjugate_hessian: h, z_bar })
}

#[derive(Debug, Clone, Serialize)]
pub struct UniformBound<S> {
    pub m_hat: S,
    pub probes_used: usize,
    pub probes_skipped: usize,
}

/// Largest eigenvalue over [`attentive_probes`] of the form `Q_k` on `U²`
/// built by polarization of the symmetric quotient at the finest `t`.
pub fn uniform_bound_check<S: Scalar>(
    model: &FunctionModel<S>,
    x_bar: &[S],
    z_bar: &[S],
    u2_basis: &Matrix<S>,
    cfg: &Rank1Config<S>,
) -> Result<UniformBound<S>> {
    let k = u2_basis.cols();
    if k == 0 {
        return Err(Error::PreconditionFailed("U² is trivial".into()));
    }
    let t = *cfg.t_grid.last().ok_or_else(|| Error::PreconditionFailed("empty t grid".into()))?;
    let probes = attentive_probes(model, x_bar, z_bar);
    let cols = u2_basis.columns();
    let q = |x: &[S], z: &[S], h: &[S]| {
        let neg: Vec<S> = h.iter().map(|&v| -v).collect();
        delta2(model, x, z, t, h).min(delta2(model, x, z, t, &neg))
    };
    let results: Vec<Option<S>> = probes
        .par_iter()
        .map(|(x, z)| {
            let mut m = Matrix::zeros(k, k);
            let diag: Vec<S> = cols.iter().map(|e| q(x, z, e)).collect();
            if diag.iter().any(|&v| !(v.abs() <= cfg.divergence_threshold)) {
                return None;
            }
            for i in 0..k {
                m[(i, i)] = diag[i];
                for j in (i + 1)..k {
                    let s: Vec<S> = cols[i].iter().zip(&cols[j]).map(|(&a, &b)| a + b).collect();
                    let v = (q(x, z, &s) - diag[i] - diag[j]) * S::lit(0.5);
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            let (eig, _) = sym_eigen(&m);
            eig.last().copied()
        })
        .collect();
    let used: Vec<S> = results.iter().flatten().copied().collect();
    Ok(UniformBound {
        m_hat: used.iter().copied().fold(S::neg_infinity(), S::max),
        probes_used: used.len(),
        probes_skipped: results.len() - used.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::builtin;

    fn m(name: &str) -> FunctionModel<f64> {
        builtin(name).unwrap()
    }

    #[test]
    fn quotient_examples() {
        let z = [0.0, 0.0];
        assert_eq!(delta2(&m("quadratic(diag(2,2))"), &z, &z, 0.3, &[1.0, 0.0]), 2.0);
        assert_eq!(delta2(&m("abs_diff"), &z, &z, 0.1, &[1.0, 1.0]), 0.0);
        assert!((delta2(&m("abs_diff"), &z, &z, 0.1, &[1.0, -1.0]) - 40.0).abs() < 1e-12);
    }

    #[test]
    fn abs_diff_rank_one() {
        let f = m("abs_diff");
        let cfg = Rank1Config::default();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(rank1_support(&f, &[0.0, 0.0], &[0.0, 0.0], &[s, s], &cfg), RankOneValue::Finite(0.0));
        assert_eq!(rank1_support(&f, &[0.0, 0.0], &[0.0, 0.0], &[s, -s], &cfg), RankOneValue::Divergent);
    }

    #[test]
    fn membership_examples() {
        let f = m("abs_diff");
        let cfg = MembershipConfig::default();
        let cand = |q: Vec<Vec<f64>>| JetCandidate::new(vec![0.0; 2], vec![0.0; 2], Matrix::from_rows(&q)).unwrap();
        assert!(subjet_membership(&f, &cand(vec![vec![1.0, 0.0], vec![0.0, -1.0]]), &cfg).is_member());
        match subjet_membership(&f, &cand(vec![vec![1.0, 1.0], vec![1.0, 1.0]]), &cfg) {
            Membership::Rejected { witness, .. } => assert!((witness[0] - witness[1]).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bundle_of_a_quadratic() {
        let f = m("quadratic(diag(1,10))");
        let b = limiting_hessians(&f, &[0.0, 0.0], &[0.0, 0.0], &BundleConfig::default()).unwrap();
        assert!(b.samples.iter().all(|(_, q)| q.sub(&Matrix::diagonal(&[1.0, 10.0])).max_abs() == 0.0));
        assert_eq!(tilt_criterion_c11(&b, &sphere_directions(2, 16)), 1.0);
    }

    #[test]
    fn huber_values() {
        let f = m("huber_source_abs");
        let cfg = SolverConfig::default();
        assert!((moreau_envelope(&f, 0.5, &[0.2], &cfg).unwrap().value - 0.04).abs() < 1e-10);
        assert!((moreau_envelope(&f, 0.5, &[2.0], &cfg).unwrap().value - 1.75).abs() < 1e-10);
    }

    #[test]
    fn duality_for_identity() {
        let r = hessian_duality_check(&m("quadratic(I)"), &[0.0, 0.0], 401, 0.05).unwrap();
        assert!(r.residual < 1e-6, "{}", r.residual);
    }

    #[test]
    fn second_order_components() {
        let cfg = Rank1Config::default();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for name in ["abs_diff", "abs_plus_quad"] {
            let c = second_order_component(&m(name), &[0.0; 2], &[0.0; 2], sphere_directions(2, 64), &cfg).unwrap();
            assert_eq!(c.u2_basis.cols(), 1, "{name}");
            let b = c.u2_basis.column(0);
            assert!((b[0] * s + b[1] * s).abs() > 1.0 - 1e-12, "{name}: {b:?}");
        }
        let c = second_order_component(&m("four_quadrant_max"), &[0.0; 2], &[0.0; 2], sphere_directions(2, 64), &cfg).unwrap();
        assert_eq!(c.u2_basis.cols(), 0);
    }
}
