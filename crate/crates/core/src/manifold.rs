//! Traces of `M = {(u, v(u))}` over a `U′`-grid and the first- and
//! second-order checks run on them.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::jet2::MembershipConfig;
use crate::lattice::{linspace, sphere_directions};
use crate::linalg::{dot, norm, sub, Matrix};
use crate::oracle::{Flags, FunctionModel};
use crate::scalar::Scalar;
use crate::ulag::{ULagContext, CROSS_CHECK_TAU};

/// One grid node of a trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceNode<S> {
    pub index: Vec<usize>,
    pub u: Vec<S>,
    /// `v(u)` in `V′` coordinates.
    pub v: Vec<S>,
    pub x: Vec<S>,
    pub f: S,
    pub l: S,
    /// `∇L(u)`; absent when the gradient could not be validated.
    pub z_u: Option<Vec<S>>,
    pub gradient_error: Option<String>,
    /// `∂v/∂u`, `dim V′ × dim U′`, row-major.
    pub dv: Vec<Vec<S>>,
    pub boundary_active: bool,
    pub approximate: bool,
}

#[derive(Clone)]
pub struct ManifoldTrace<S> {
    pub ctx: ULagContext<S>,
    pub delta: S,
    pub resolution: usize,
    /// Halvings of `δ` applied because of boundary-active nodes.
    pub shrinks: usize,
    pub nodes: Vec<TraceNode<S>>,
}

const MAX_SHRINKS: usize = 3;

fn grid_nodes<S: Scalar>(k: usize, delta: S, resolution: usize) -> Vec<(Vec<usize>, Vec<S>)> {
    if k == 0 {
        return vec![(Vec::new(), Vec::new())];
    }
    let axis = linspace(-delta, delta, resolution);
    let total = resolution.pow(k as u32);
    let slack = delta * S::lit(1e-12);
    (0..total)
        .filter_map(|flat| {
            let mut rem = flat;
            let mut idx = vec![0; k];
            for a in (0..k).rev() {
                idx[a] = rem % resolution;
                rem /= resolution;
            }
            let u: Vec<S> = idx.iter().map(|&i| axis[i]).collect();
            (norm(&u) <= delta + slack).then_some((idx, u))
        })
        .collect()
}

fn dv_at<S: Scalar>(ctx: &ULagContext<S>, u: &[S]) -> Result<Vec<Vec<S>>> {
    let k = ctx.dim_u();
    let m = ctx.dim_v();
    let h = S::lit(1e-4) * (S::one() + norm(u));
    let mut out = vec![vec![S::zero(); k]; m];
    for j in 0..k {
        let mut up = u.to_vec();
        let mut dn = u.to_vec();
        up[j] = up[j] + h;
        dn[j] = dn[j] - h;
        let (a, b) = (ctx.v_of_u(&up)?.v, ctx.v_of_u(&dn)?.v);
        for i in 0..m {
            out[i][j] = (a[i] - b[i]) / (S::lit(2.0) * h);
        }
    }
    Ok(out)
}

fn fill<S: Scalar>(ctx: &ULagContext<S>, delta: S, resolution: usize) -> Result<Vec<TraceNode<S>>> {
    grid_nodes(ctx.dim_u(), delta, resolution)
        .into_par_iter()
        .map(|(index, u)| {
            let p = ctx.v_of_u(&u)?;
            let (z_u, gradient_error) = match ctx.grad_l(&u, None) {
                Ok(g) => (Some(g.z_u), None),
                Err(e) => (None, Some(e.to_string())),
            };
            Ok(TraceNode {
                index,
                dv: dv_at(ctx, &u)?,
                u,
                v: p.v,
                x: p.x,
                f: p.f_value,
                l: p.value,
                z_u,
                gradient_error,
                boundary_active: p.boundary_active,
                approximate: p.approximate,
            })
        })
        .collect()
}

/// Fills the trace on the lattice of `[−δ, δ]^k` restricted to the ball,
/// halving `δ` (up to three times) while boundary-active nodes appear.
/// Nodes that stay boundary-active are kept and flagged.
pub fn trace<S: Scalar>(ctx: &ULagContext<S>, delta: S, resolution: usize) -> Result<ManifoldTrace<S>> {
    if !(delta > S::zero()) || delta > ctx.eps_u() {
        return Err(Error::PreconditionFailed(format!(
            "δ = {} must lie in (0, ε = {}]",
            delta.to_f64_lossy(),
            ctx.eps_u().to_f64_lossy()
        )));
    }
    let mut d = delta;
    let mut shrinks = 0;
    loop {
        let nodes = fill(ctx, d, resolution)?;
        if shrinks == MAX_SHRINKS || !nodes.iter().any(|n| n.boundary_active) {
            return Ok(ManifoldTrace { ctx: ctx.clone(), delta: d, resolution, shrinks, nodes });
        }
        d = d * S::lit(0.5);
        shrinks += 1;
    }
}

/// Default trace radius `ε/4`.
pub fn default_delta<S: Scalar>(ctx: &ULagContext<S>) -> S {
    ctx.eps_u() * S::lit(0.25)
}

impl<S: Scalar> ManifoldTrace<S> {
    pub fn spacing(&self) -> S {
        if self.resolution < 2 {
            S::zero()
        } else {
            S::lit(2.0) * self.delta / S::from_count(self.resolution - 1)
        }
    }

    /// Same context and radius at `2r − 1` points per axis.
    pub fn refined(&self) -> Result<ManifoldTrace<S>> {
        let resolution = 2 * self.resolution - 1;
        let nodes = fill(&self.ctx, self.delta, resolution)?;
        Ok(ManifoldTrace { ctx: self.ctx.clone(), delta: self.delta, resolution, shrinks: self.shrinks, nodes })
    }

    pub fn points(&self) -> Vec<Vec<S>> {
        self.nodes.iter().map(|n| n.x.clone()).collect()
    }

    /// Columns `u…, v…, f, z_u…, dv…, boundary_active, approximate`.
    pub fn to_csv(&self) -> String {
        let k = self.ctx.dim_u();
        let m = self.ctx.dim_v();
        let mut cols: Vec<String> = (0..k).map(|i| format!("u{i}")).collect();
        cols.extend((0..m).map(|i| format!("v{i}")));
        cols.push("f".into());
        cols.extend((0..k).map(|i| format!("z_u{i}")));
        for i in 0..m {
            cols.extend((0..k).map(|j| format!("dv{i}_{j}")));
        }
        cols.push("boundary_active".into());
        cols.push("approximate".into());
        let mut out = cols.join(",");
        out.push('\n');
        for n in &self.nodes {
            let mut row: Vec<String> = n.u.iter().chain(&n.v).map(|x| x.to_f64_lossy().to_string()).collect();
            row.push(n.f.to_f64_lossy().to_string());
            match &n.z_u {
                Some(z) => row.extend(z.iter().map(|x| x.to_f64_lossy().to_string())),
                None => row.extend((0..k).map(|_| "nan".to_string())),
            }
            row.extend(n.dv.iter().flatten().map(|x| x.to_f64_lossy().to_string()));
            row.push(n.boundary_active.to_string());
            row.push(n.approximate.to_string());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    fn neighbours(&self) -> Vec<(usize, usize)> {
        let lookup: HashMap<&[usize], usize> = self.nodes.iter().enumerate().map(|(i, n)| (n.index.as_slice(), i)).collect();
        let mut out = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            for a in 0..n.index.len() {
                let mut j = n.index.clone();
                j[a] += 1;
                if let Some(&other) = lookup.get(j.as_slice()) {
                    out.push((i, other));
                }
            }
        }
        out
    }
}

/// `max ‖z_U(a) − z_U(b)‖/‖a − b‖` over node pairs.
pub fn lipschitz_estimate<S: Scalar>(tr: &ManifoldTrace<S>) -> S {
    let with: Vec<(&Vec<S>, &Vec<S>)> = tr.nodes.iter().filter_map(|n| n.z_u.as_ref().map(|z| (&n.u, z))).collect();
    (0..with.len())
        .into_par_iter()
        .map(|i| {
            let mut best = S::zero();
            for j in (i + 1)..with.len() {
                let du = norm(&sub(with[i].0, with[j].0));
                if du > S::zero() {
                    best = best.max(norm(&sub(with[i].1, with[j].1)) / du);
                }
            }
            best
        })
        .reduce(S::zero, S::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct C11Report<S> {
    pub lipschitz: S,
    pub refined_lipschitz: S,
    /// `refined / coarse`; 1 when both are below `1e−6`.
    pub ratio: S,
    pub missing_gradients: usize,
}

impl<S: Scalar> C11Report<S> {
    pub fn stable(&self, rel: S) -> bool {
        self.lipschitz.is_finite() && self.refined_lipschitz.is_finite() && (self.ratio - S::one()).abs() <= rel
    }
}

/// Lipschitz constant of `u ↦ z_U(u)` on the trace and on its 2× refinement.
pub fn c11_check<S: Scalar>(tr: &ManifoldTrace<S>) -> Result<C11Report<S>> {
    let fine = tr.refined()?;
    let a = lipschitz_estimate(tr);
    let b = lipschitz_estimate(&fine);
    // gradients that vanish up to solver noise have no meaningful ratio
    let floor = S::lit(1e-6);
    let ratio = if a <= floor && b <= floor { S::one() } else { b / a };
    Ok(C11Report {
        lipschitz: a,
        refined_lipschitz: b,
        ratio,
        missing_gradients: tr.nodes.iter().chain(&fine.nodes).filter(|n| n.z_u.is_none()).count(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainRow<S> {
    pub u: Vec<S>,
    pub generator: Vec<S>,
    pub pairing: Vec<S>,
    pub residual: S,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainReport<S> {
    pub max_residual: S,
    pub rows: Vec<ChainRow<S>>,
}

/// `|(e_U, ∇v(u))ᵀ s − z_U(u)|` for every generator `s` of `co ∂f` at each node.
pub fn grad_chain_check<S: Scalar>(tr: &ManifoldTrace<S>) -> Result<ChainReport<S>> {
    let ctx = &tr.ctx;
    let k = ctx.dim_u();
    let mut rows = Vec::new();
    for n in &tr.nodes {
        let Some(z_u) = &n.z_u else { continue };
        let poly = ctx.model.subdifferential_polytope(&n.x, S::lit(CROSS_CHECK_TAU))?;
        for s in poly.generators() {
            let su = if k > 0 { ctx.u_basis.tr_mul_vec(s) } else { Vec::new() };
            let sv = if ctx.dim_v() > 0 { ctx.v_basis.tr_mul_vec(s) } else { Vec::new() };
            let pairing: Vec<S> = (0..k)
                .map(|j| su[j] + n.dv.iter().zip(&sv).map(|(row, &c)| row[j] * c).sum::<S>())
                .collect();
            let residual = norm(&sub(&pairing, z_u));
            rows.push(ChainRow { u: n.u.clone(), generator: s.clone(), pairing, residual });
        }
    }
    Ok(ChainReport { max_residual: rows.iter().map(|r| r.residual).fold(S::zero(), S::max), rows })
}

#[derive(Debug, Clone, Serialize)]
pub struct TaylorReport<S> {
    pub worst_margin: S,
    pub worst_u: Vec<S>,
    pub worst_u_prime: Vec<S>,
    pub samples: usize,
}

/// `min` over nodes `u` and nearby `(u′, v′)` of
/// `f(x̄+u′+v′) − f(x̄+u+v(u)) − ⟨z_U(u) + z̄_V, Δ⟩ − ½Δuᵀ Q Δu + η(‖Δu‖)‖Δu‖²`
/// with `v′ = v(u′)` and `v(u′) ± 10⁻²ρ` along each `V′` axis, `ρ = ‖Δu‖`.
pub fn taylor_lower_check<S: Scalar>(tr: &ManifoldTrace<S>, q: &Matrix<S>, cfg: &MembershipConfig<S>) -> Result<TaylorReport<S>> {
    let ctx = &tr.ctx;
    let k = ctx.dim_u();
    if q.rows() != k || q.cols() != k {
        return Err(Error::DimensionMismatch { expected: k, got: q.rows() });
    }
    let dirs: Vec<Vec<S>> = sphere_directions(k, 16);
    let radii: Vec<S> = cfg.radii.iter().map(|&r| r * tr.delta).collect();
    let zv = &ctx.z_bar_v;
    let mut work: Vec<(&TraceNode<S>, Vec<S>, S)> = Vec::new();
    for n in tr.nodes.iter().filter(|n| n.z_u.is_some()) {
        for &r in &radii {
            for d in &dirs {
                let up: Vec<S> = n.u.iter().zip(d).map(|(&a, &b)| a + r * b).collect();
                if norm(&up) <= ctx.eps_u() {
                    work.push((n, up, r));
                }
            }
        }
    }
    let results: Vec<(S, Vec<S>, Vec<S>)> = work
        .par_iter()
        .map(|(n, up, rho)| {
            let z_u = n.z_u.as_ref().expect("filtered");
            let du = sub(up, &n.u);
            let eta = cfg.slack_coeff * rho.sqrt() + cfg.noise * (S::one() + n.f.abs()) / (*rho * *rho);
            let base = ctx.v_of_u(up)?;
            let mut candidates = vec![base.v.clone()];
            for i in 0..ctx.dim_v() {
                for s in [S::one(), -S::one()] {
                    let mut v = base.v.clone();
                    v[i] = v[i] + s * S::lit(1e-2) * *rho;
                    candidates.push(v);
                }
            }
            let mut worst = S::infinity();
            for vp in candidates {
                let dv = sub(&vp, &n.v);
                let lhs = ctx.model.value(&ctx.point(up, &vp));
                let rhs = n.f + dot(z_u, &du) + dot(zv, &dv) + S::lit(0.5) * q.quad_form(&du);
                worst = worst.min(lhs - rhs + eta * *rho * *rho);
            }
            Ok((worst, n.u.clone(), up.clone()))
        })
        .collect::<Result<_>>()?;
    let mut report = TaylorReport { worst_margin: S::infinity(), worst_u: Vec::new(), worst_u_prime: Vec::new(), samples: results.len() };
    for (m, u, up) in results {
        if m < report.worst_margin {
            report = TaylorReport { worst_margin: m, worst_u: u, worst_u_prime: up, samples: report.samples };
        }
    }
    Ok(report)
}

/// `L` as a model on `U′` coordinates, for subjet probes of the Lagrangian.
pub fn lagrangian_model<S: Scalar>(ctx: &ULagContext<S>) -> FunctionModel<S> {
    let c = Arc::new(ctx.clone());
    let value = Arc::new(move |u: &[S]| c.l_eps(u).unwrap_or(S::nan()));
    FunctionModel::custom(format!("lagrangian({})", ctx.model.name()), ctx.dim_u(), value, Flags::default())
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityLevel<S> {
    pub resolution: usize,
    pub spacing: S,
    pub max_jump: S,
}

/// Largest jump of `∇v` between adjacent nodes on the trace and on `levels`
/// successive 2× refinements.
pub fn dv_continuity_check<S: Scalar>(tr: &ManifoldTrace<S>, levels: usize) -> Result<Vec<ContinuityLevel<S>>> {
    let mut out = Vec::new();
    let mut current = tr.clone();
    for level in 0..=levels {
        if level > 0 {
            current = current.refined()?;
        }
        let max_jump = current
            .neighbours()
            .iter()
            .map(|&(a, b)| {
                let (p, q) = (&current.nodes[a].dv, &current.nodes[b].dv);
                p.iter().flatten().zip(q.iter().flatten()).map(|(&x, &y)| (x - y).abs()).fold(S::zero(), S::max)
            })
            .fold(S::zero(), S::max);
        out.push(ContinuityLevel { resolution: current.resolution, spacing: current.spacing(), max_jump });
    }
    Ok(out)
}

/// `max |f(x̄+u+v(u)) − L(u) − ⟨z̄_V, v(u)⟩|` over the nodes.
pub fn consistency_check<S: Scalar>(tr: &ManifoldTrace<S>) -> S {
    tr.nodes
        .iter()
        .map(|n| (n.f - n.l - dot(&tr.ctx.z_bar_v, &n.v)).abs())
        .fold(S::zero(), S::max)
}
