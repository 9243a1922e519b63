//! Convex envelopes and discrete Legendre transforms of functions sampled on
//! uniform box grids (dimension ≤ 3).
//!
//! The envelope at a point is the value of the LP
//! `min Σλᵢh(xᵢ) s.t. Σλᵢxᵢ = x, Σλᵢ = 1, λ ≥ 0` over the finite grid nodes,
//! which is the definition of `co h` restricted to the grid.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::linspace;
use crate::linalg::{dot, solve, Matrix};
use crate::lp::{solve_standard, LpOutcome};
use crate::oracle::FunctionModel;
use crate::scalar::Scalar;
use crate::ulag::ULagContext;
use crate::vu::VuFrame;

/// Values on the nodes of a uniform grid over an axis-aligned box.
///
/// Nodes are stored row-major with the last axis fastest; `+∞` marks nodes
/// outside the effective domain.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction<S> {
    pub lower: Vec<S>,
    pub upper: Vec<S>,
    pub resolution: usize,
    pub values: Vec<S>,
}

impl<S: Scalar> GridFunction<S> {
    pub fn new(lower: Vec<S>, upper: Vec<S>, resolution: usize, values: Vec<S>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch { expected: lower.len(), got: upper.len() });
        }
        let expected = resolution.pow(lower.len() as u32);
        if values.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: values.len() });
        }
        Ok(GridFunction { lower, upper, resolution, values })
    }

    /// Samples `f` on the grid (in parallel).
    pub fn sample<F: Fn(&[S]) -> S + Sync>(lower: Vec<S>, upper: Vec<S>, resolution: usize, f: F) -> Self {
        let total = resolution.pow(lower.len() as u32);
        let mut g = GridFunction { lower, upper, resolution, values: Vec::new() };
        g.values = (0..total).into_par_iter().map(|i| f(&g.node(i))).collect();
        g
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spacing(&self, axis: usize) -> S {
        if self.resolution < 2 {
            return S::zero();
        }
        (self.upper[axis] - self.lower[axis]) / S::from_count(self.resolution - 1)
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let d = self.dim();
        let mut idx = vec![0; d];
        let mut rem = flat;
        for a in (0..d).rev() {
            idx[a] = rem % self.resolution;
            rem /= self.resolution;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.resolution + i)
    }

    pub fn node(&self, flat: usize) -> Vec<S> {
        let idx = self.multi_index(flat);
        (0..self.dim())
            .map(|a| {
                // same formula as `linspace`, so symmetric grids contain 0 exactly
                let axis = linspace(self.lower[a], self.upper[a], self.resolution);
                axis[idx[a]]
            })
            .collect()
    }

    pub fn nodes(&self) -> Vec<Vec<S>> {
        let axes: Vec<Vec<S>> = (0..self.dim()).map(|a| linspace(self.lower[a], self.upper[a], self.resolution)).collect();
        (0..self.resolution.pow(self.dim() as u32))
            .map(|i| {
                let idx = self.multi_index(i);
                idx.iter().enumerate().map(|(a, &k)| axes[a][k]).collect()
            })
            .collect()
    }

    /// Index of the smallest value.
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v < self.values[best] {
                best = i;
            }
        }
        best
    }

    /// `½ Σ_axes max |second difference|` over finite triples: a bound on the
    /// error of piecewise-linear interpolation between nodes.
    pub fn grid_error(&self) -> S {
        let d = self.dim();
        let mut total = S::zero();
        for a in 0..d {
            let mut worst = S::zero();
            for i in 0..self.len() {
                let idx = self.multi_index(i);
                if idx[a] == 0 || idx[a] + 1 >= self.resolution {
                    continue;
                }
                let mut lo = idx.clone();
                lo[a] -= 1;
                let mut hi = idx.clone();
                hi[a] += 1;
                let (l, c, h) = (self.values[self.flat_index(&lo)], self.values[i], self.values[self.flat_index(&hi)]);
                if l.is_finite() && c.is_finite() && h.is_finite() {
                    worst = worst.max((l - c - c + h).abs());
                }
            }
            total = total + worst;
        }
        total * S::lit(0.5)
    }

    /// CSV: `lower,…`, `upper,…`, `resolution,N`, `value`, then one value per
    /// node in row-major order (`inf` for `+∞`).
    pub fn to_csv(&self) -> String {
        let join = |v: &[S]| v.iter().map(|x| format!("{}", x.to_f64_lossy())).collect::<Vec<_>>().join(",");
        let mut out = format!("lower,{}\nupper,{}\nresolution,{}\nvalue\n", join(&self.lower), join(&self.upper), self.resolution);
        for v in &self.values {
            out.push_str(&format!("{}\n", v.to_f64_lossy()));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Problem(format!("grid csv: {m}"));
        let mut lines = text.lines();
        let mut header = |key: &str| -> Result<Vec<f64>> {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            let mut parts = line.split(',');
            if parts.next() != Some(key) {
                return Err(bad(&format!("expected `{key}` row")));
            }
            parts.map(|p| p.trim().parse::<f64>().map_err(|_| bad("number"))).collect()
        };
        let lower = header("lower")?;
        let upper = header("upper")?;
        let res = header("resolution")?;
        if res.len() != 1 || res[0] < 1.0 {
            return Err(bad("resolution"));
        }
        if lines.next().map(str::trim) != Some("value") {
            return Err(bad("expected `value` row"));
        }
        let values: Vec<S> = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map(S::lit).map_err(|_| bad("value")))
            .collect::<Result<_>>()?;
        GridFunction::new(
            lower.into_iter().map(S::lit).collect(),
            upper.into_iter().map(S::lit).collect(),
            res[0] as usize,
            values,
        )
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d > 3 {
        Err(Error::DimensionTooLarge(d))
    } else {
        Ok(())
    }
}

/// `co h(x)` from the grid nodes; `+∞` outside the hull of finite nodes.
pub fn envelope_at<S: Scalar>(gf: &GridFunction<S>, nodes: &[Vec<S>], x: &[S]) -> S {
    let finite: Vec<usize> = (0..gf.len()).filter(|&i| gf.values[i].is_finite()).collect();
    if finite.is_empty() {
        return S::infinity();
    }
    let columns: Vec<Vec<S>> = finite
        .iter()
        .map(|&i| {
            let mut c = nodes[i].clone();
            c.push(S::one());
            c
        })
        .collect();
    let costs: Vec<S> = finite.iter().map(|&i| gf.values[i]).collect();
    let mut b = x.to_vec();
    b.push(S::one());
    match solve_standard(&columns, &b, &costs) {
        LpOutcome::Optimal { value, .. } => value,
        LpOutcome::Infeasible => S::infinity(),
    }
}

/// Pointwise `co h` on every node.
pub fn convex_envelope<S: Scalar>(gf: &GridFunction<S>) -> Result<GridFunction<S>> {
    check_dim(gf.dim())?;
    let nodes = gf.nodes();
    let values: Vec<S> = (0..gf.len())
        .into_par_iter()
        .map(|i| {
            if gf.values[i].is_finite() {
                envelope_at(gf, &nodes, &nodes[i]).min(gf.values[i])
            } else {
                envelope_at(gf, &nodes, &nodes[i])
            }
        })
        .collect();
    Ok(GridFunction { lower: gf.lower.clone(), upper: gf.upper.clone(), resolution: gf.resolution, values })
}

/// Discrete conjugate value with the node attaining the supremum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConjugateValue<S> {
    pub value: S,
    pub node: usize,
}

/// `h*(z) = max_i ⟨z, xᵢ⟩ − h(xᵢ)`.
pub fn conjugate_at<S: Scalar>(gf: &GridFunction<S>, nodes: &[Vec<S>], z: &[S]) -> ConjugateValue<S> {
    let mut best = ConjugateValue { value: S::neg_infinity(), node: 0 };
    for (i, x) in nodes.iter().enumerate() {
        let h = gf.values[i];
        if !h.is_finite() {
            continue;
        }
        let v = dot(z, x) - h;
        if v > best.value {
            best = ConjugateValue { value: v, node: i };
        }
    }
    best
}

/// Whether a node lies on the boundary of the box.
pub fn is_boundary_node<S: Scalar>(gf: &GridFunction<S>, node: usize) -> bool {
    gf.multi_index(node).iter().any(|&i| i == 0 || i + 1 >= gf.resolution)
}

/// Discrete conjugate refined by the maximum of the local quadratic model
/// of `⟨z,·⟩ − h` on the `3^d` stencil around the best node. Exact for
/// quadratic `h` whose maximizer is interior.
pub fn refined_conjugate_at<S: Scalar>(gf: &GridFunction<S>, nodes: &[Vec<S>], z: &[S]) -> S {
    let best = conjugate_at(gf, nodes, z);
    if is_boundary_node(gf, best.node) {
        return best.value;
    }
    let d = gf.dim();
    let idx = gf.multi_index(best.node);
    let phi = |offs: &[isize]| -> S {
        let j: Vec<usize> = idx.iter().zip(offs).map(|(&i, &o)| (i as isize + o) as usize).collect();
        let flat = gf.flat_index(&j);
        dot(z, &nodes[flat]) - gf.values[flat]
    };
    let zero = vec![0isize; d];
    let p0 = phi(&zero);
    let mut g = vec![S::zero(); d];
    let mut hm = Matrix::zeros(d, d);
    for a in 0..d {
        let ha = gf.spacing(a);
        let mut e = zero.clone();
        e[a] = 1;
        let pp = phi(&e);
        e[a] = -1;
        let pm = phi(&e);
        g[a] = (pp - pm) / (S::lit(2.0) * ha);
        hm[(a, a)] = (pp - p0 - p0 + pm) / (ha * ha);
        for b in (a + 1)..d {
            let hb = gf.spacing(b);
            let mut val = S::zero();
            for (sa, sb, sign) in [(1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)] {
                let mut e = zero.clone();
                e[a] = sa;
                e[b] = sb;
                val = val + S::lit(sign) * phi(&e);
            }
            let c = val / (S::lit(4.0) * ha * hb);
            hm[(a, b)] = c;
            hm[(b, a)] = c;
        }
    }
    // maximum of p0 + gᵀs + ½sᵀHs is p0 − ½gᵀH⁻¹g when H ≺ 0
    match solve(&hm, &g) {
        Some(s) => {
            let gain = dot(&g, &s) * S::lit(-0.5);
            if gain >= S::zero() {
                p0 + gain
            } else {
                best.value
            }
        }
        None => best.value,
    }
}

/// Discrete conjugate on a dual grid.
pub fn legendre<S: Scalar>(gf: &GridFunction<S>, dual_lower: Vec<S>, dual_upper: Vec<S>, dual_resolution: usize) -> GridFunction<S> {
    let nodes = gf.nodes();
    GridFunction::sample(dual_lower, dual_upper, dual_resolution, |z| conjugate_at(gf, &nodes, z).value)
}

/// Residual of `co h = h` along a trace.
#[derive(Debug, Clone, Serialize)]
pub struct AgreementReport<S> {
    pub max_residual: S,
    pub grid_error: S,
    pub spacing: Vec<S>,
    pub residuals: Vec<S>,
}

/// `h(w) = f(x̄ + U a + V b)` on the frame-coordinate box of half-width `ε`.
pub fn frame_grid<S: Scalar>(model: &FunctionModel<S>, frame: &VuFrame<S>, resolution: usize) -> Result<GridFunction<S>> {
    let n = frame.dim();
    check_dim(n)?;
    let e = frame.epsilon;
    let k = frame.dim_u();
    Ok(GridFunction::sample(vec![-e; n], vec![e; n], resolution, |c: &[S]| {
        let x = frame.embed(&c[..k], &c[k..]);
        let x: Vec<S> = x.iter().zip(&frame.x_bar).map(|(&a, &b)| a + b).collect();
        model.value(&x)
    }))
}

/// `max |co h(w) − h(w)|` over trace points `x = x̄ + w`, with `co h` from the
/// grid envelope and `h(w)` evaluated exactly.
pub fn envelope_agreement_check<S: Scalar>(
    model: &FunctionModel<S>,
    frame: &VuFrame<S>,
    trace_points: &[Vec<S>],
    resolution: usize,
) -> Result<AgreementReport<S>> {
    let gf = frame_grid(model, frame, resolution)?;
    let nodes = gf.nodes();
    let k = frame.dim_u();
    let residuals: Vec<S> = trace_points
        .par_iter()
        .map(|x| {
            let w: Vec<S> = x.iter().zip(&frame.x_bar).map(|(&a, &b)| a - b).collect();
            let (a, b) = frame.project(&w);
            let mut c = a;
            c.extend(b);
            debug_assert_eq!(c.len(), k + frame.dim_v());
            (envelope_at(&gf, &nodes, &c) - model.value(x)).abs()
        })
        .collect();
    Ok(AgreementReport {
        max_residual: residuals.iter().copied().fold(S::zero(), S::max),
        grid_error: gf.grid_error(),
        spacing: (0..gf.dim()).map(|a| gf.spacing(a)).collect(),
        residuals,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConjugacyRow<S> {
    pub z_u: Vec<S>,
    /// `k_v*(z_U)`.
    pub lhs: S,
    /// `h*(z_U + z̄_V)`.
    pub rhs: S,
    pub lhs_boundary: bool,
    pub rhs_boundary: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConjugacyReport<S> {
    pub max_residual: S,
    pub rows: Vec<ConjugacyRow<S>>,
}

/// Compares the discrete conjugates `k_v*(z_U)` and `h*(z_U + z̄_V)`, where
/// `k_v` is sampled on `[−ε, ε]^k` and `h(w) = f(x̄+w)` on the
/// `U′ ⊕ V′` coordinate box, both with `resolution` points per axis.
pub fn conjugacy_identity_check<S: Scalar>(
    ctx: &ULagContext<S>,
    z_u_grid: &[Vec<S>],
    resolution: usize,
) -> Result<ConjugacyReport<S>> {
    let k = ctx.dim_u();
    let m = ctx.dim_v();
    check_dim(k + m)?;
    let e = ctx.eps_u();
    let ev = ctx.eps_v;
    let kv_nodes: Vec<Vec<S>> = GridFunction { lower: vec![-e; k], upper: vec![e; k], resolution, values: Vec::new() }
        .nodes();
    let kv_values: Vec<S> = kv_nodes.par_iter().map(|u| ctx.k_v(u)).collect::<Result<_>>()?;
    let kv = GridFunction::new(vec![-e; k], vec![e; k], resolution, kv_values)?;

    let mut lower = vec![-e; k];
    lower.extend(vec![-ev; m]);
    let mut upper = vec![e; k];
    upper.extend(vec![ev; m]);
    let h = GridFunction::sample(lower, upper, resolution, |c: &[S]| ctx.model.value(&ctx.point(&c[..k], &c[k..])));
    let h_nodes = h.nodes();

    let rows: Vec<ConjugacyRow<S>> = z_u_grid
        .par_iter()
        .map(|z| {
            let l = conjugate_at(&kv, &kv_nodes, z);
            let mut zz = z.clone();
            zz.extend(ctx.z_bar_v.iter().copied());
            let r = conjugate_at(&h, &h_nodes, &zz);
            ConjugacyRow {
                z_u: z.clone(),
                lhs: l.value,
                rhs: r.value,
                lhs_boundary: is_boundary_node(&kv, l.node),
                rhs_boundary: is_boundary_node(&h, r.node),
            }
        })
        .collect();
    let max_residual = rows.iter().map(|r| (r.lhs - r.rhs).abs()).fold(S::zero(), S::max);
    Ok(ConjugacyReport { max_residual, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(f: impl Fn(f64) -> f64 + Sync, a: f64, b: f64, res: usize) -> GridFunction<f64> {
        GridFunction::sample(vec![a], vec![b], res, |x: &[f64]| f(x[0]))
    }

    #[test]
    fn double_well_envelope() {
        let gf = one_d(|t| (t * t - 1.0).powi(2), -2.0, 2.0, 81);
        let env = convex_envelope(&gf).unwrap();
        for (i, x) in gf.nodes().iter().enumerate() {
            let t = x[0];
            let expect = if t.abs() <= 1.0 { 0.0 } else { (t * t - 1.0).powi(2) };
            assert!((env.values[i] - expect).abs() < 1e-9, "t={t}: {} vs {expect}", env.values[i]);
        }
    }

    #[test]
    fn single_finite_node() {
        let mut values = vec![f64::INFINITY; 5];
        values[2] = 3.0;
        let gf = GridFunction::new(vec![-1.0], vec![1.0], 5, values.clone()).unwrap();
        assert_eq!(convex_envelope(&gf).unwrap().values, values);
    }

    #[test]
    fn conjugates_in_one_dimension() {
        let half_square = one_d(|t| 0.5 * t * t, -2.0, 2.0, 401);
        let nodes = half_square.nodes();
        assert!((conjugate_at(&half_square, &nodes, &[1.0]).value - 0.5).abs() < 1e-12);
        let abs = one_d(f64::abs, -2.0, 2.0, 401);
        let nodes = abs.nodes();
        assert!(conjugate_at(&abs, &nodes, &[0.5]).value.abs() < 1e-12);
        let c = conjugate_at(&abs, &nodes, &[1.5]);
        assert!((c.value - 1.0).abs() < 1e-12);
        assert!(is_boundary_node(&abs, c.node));
    }

    #[test]
    fn too_many_dimensions() {
        let gf = GridFunction::new(vec![0.0; 4], vec![1.0; 4], 1, vec![0.0]).unwrap();
        assert_eq!(convex_envelope(&gf), Err(Error::DimensionTooLarge(4)));
    }

    #[test]
    fn csv_roundtrip() {
        let mut gf = one_d(|t| t * t, -1.0, 1.0, 5);
        gf.values[0] = f64::INFINITY;
        let back: GridFunction<f64> = GridFunction::from_csv(&gf.to_csv()).unwrap();
        assert_eq!(back, gf);
    }

    #[test]
    fn refined_conjugate_is_exact_for_quadratics() {
        let gf = GridFunction::sample(vec![-1.0, -1.0], vec![1.0, 1.0], 41, |x: &[f64]| {
            x[0] * x[0] + 2.5 * x[1] * x[1] + 0.5 * x[0] * x[1]
        });
        let nodes = gf.nodes();
        let z = [0.123, -0.271];
        // conjugate of ½xᵀAx is ½zᵀA⁻¹z with A = [[2, .5], [.5, 5]]
        let det = 2.0 * 5.0 - 0.25;
        let exact = 0.5 * (5.0 * z[0] * z[0] - 2.0 * 0.5 * z[0] * z[1] + 2.0 * z[1] * z[1]) / det;
        assert!((refined_conjugate_at(&gf, &nodes, &z) - exact).abs() < 1e-13);
    }
}
