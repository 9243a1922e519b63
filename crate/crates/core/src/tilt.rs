//! Tilt map, tilt stability, prox-regularity, quadratic minorants and strict
//! order-two minima.
//!
//! All verdicts are sampling evidence on deterministic lattices: the inner
//! argmin is computed by [`crate::search`], the inequalities are checked on
//! fixed point sets.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{ball_lattice, box_lattice, linspace, sphere_directions};
use crate::linalg::{dot, norm, sub};
use crate::oracle::{FunctionModel, DEFAULT_ACTIVE_TOL};
use crate::scalar::{to_f64_vec, Scalar};
use crate::search::{minimize_in_ball, BallObjective, SolverConfig};

/// Relative value tolerance for "also a minimizer".
pub const CLUSTER_TOL: f64 = 1e-9;
/// Minimizers closer than `SEP_FACTOR·ε` are the same point.
pub const SEP_FACTOR: f64 = 1e-6;

/// `m_f(z)` on the ball `B_ε(x̄)`.
#[derive(Debug, Clone, Serialize)]
pub struct TiltProbeResult<S> {
    pub z: Vec<S>,
    pub minimizers: Vec<Vec<S>>,
    /// `f(x) − ⟨z, x⟩` at the minimizers.
    pub value: S,
    pub single_valued: bool,
    /// Some start exhausted its budget without a certified polish.
    pub approximate: bool,
}

/// Computes the tilt map at `z`.
pub fn tilt_map<S: Scalar>(model: &FunctionModel<S>, x_bar: &[S], eps: S, z: &[S], cfg: &SolverConfig<S>) -> TiltProbeResult<S> {
    let obj = BallObjective::full(model, x_bar.to_vec(), z.to_vec());
    let run = minimize_in_ball(&obj, eps, cfg);
    let mins = run.minimizers(S::lit(CLUSTER_TOL), S::lit(SEP_FACTOR) * eps);
    let offset = dot(z, x_bar);
    let value = mins[0].1 - offset;
    let minimizers: Vec<Vec<S>> = mins.iter().map(|(y, _)| obj.point(y)).collect();
    TiltProbeResult {
        z: z.to_vec(),
        single_valued: minimizers.len() == 1,
        minimizers,
        value,
        approximate: run.budget_exceeded(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityVerdict<S> {
    pub stable: bool,
    /// Some probe hit the solver budget; `stable` is then not trusted.
    pub inconclusive: bool,
    pub lipschitz_estimate: S,
    pub witness: Option<Vec<S>>,
    pub grid_radius: S,
    /// `‖m_f(0) − x̄‖` (first minimizer).
    pub origin_error: S,
    pub probes: Vec<TiltProbeResult<S>>,
}

/// Probes `m_f` at `z = 0` and on the `grid_size`-per-axis lattice of
/// `B_{tilt_radius}(0)`; stable iff every probe is single valued and
/// `m_f(0) = x̄` to `1e−8`.
pub fn tilt_stability_test<S: Scalar>(
    model: &FunctionModel<S>,
    x_bar: &[S],
    eps: S,
    tilt_radius: S,
    grid_size: usize,
    cfg: &SolverConfig<S>,
) -> Result<StabilityVerdict<S>> {
    let n = model.dim();
    let poly = model.subdifferential_polytope(x_bar, S::lit(DEFAULT_ACTIVE_TOL))?;
    let zero = vec![S::zero(); n];
    let d0 = poly.distance_to(&zero);
    if d0 > S::lit(1e-8) {
        return Err(Error::PreconditionFailed(format!(
            "0 is not in co ∂f(x̄) (distance {:e})",
            d0.to_f64_lossy()
        )));
    }
    let mut tilts = vec![zero.clone()];
    tilts.extend(ball_lattice(&zero, tilt_radius, grid_size).into_iter().filter(|z| norm(z) > S::zero()));
    let probes: Vec<TiltProbeResult<S>> = tilts.par_iter().map(|z| tilt_map(model, x_bar, eps, z, cfg)).collect();

    let origin_error = norm(&sub(&probes[0].minimizers[0], x_bar));
    let inconclusive = probes.iter().any(|p| p.approximate);
    let mut witness = None;
    if origin_error > S::lit(1e-8) {
        witness = Some(zero.clone());
    }
    if witness.is_none() {
        witness = probes.iter().find(|p| !p.single_valued).map(|p| p.z.clone());
    }
    let mut lip = S::zero();
    for (i, a) in probes.iter().enumerate() {
        if !a.single_valued {
            continue;
        }
        for b in probes.iter().skip(i + 1) {
            if !b.single_valued {
                continue;
            }
            let dz = norm(&sub(&a.z, &b.z));
            if dz > S::zero() {
                lip = lip.max(norm(&sub(&a.minimizers[0], &b.minimizers[0])) / dz);
            }
        }
    }
    Ok(StabilityVerdict {
        stable: witness.is_none() && !inconclusive,
        inconclusive,
        lipschitz_estimate: lip,
        witness,
        grid_radius: tilt_radius,
        origin_error,
        probes,
    })
}

/// `min ⟨m_f(z) − m_f(z′), z − z′⟩` over pairs of single-valued probes; the
/// tilt map of a convex function is monotone, so this is `≥ 0` up to
/// solver accuracy.
pub fn tilt_monotonicity<S: Scalar>(probes: &[TiltProbeResult<S>]) -> S {
    let mut worst = S::infinity();
    for (i, a) in probes.iter().enumerate() {
        for b in probes.iter().skip(i + 1) {
            if a.single_valued && b.single_valued {
                worst = worst.min(dot(&sub(&a.minimizers[0], &b.minimizers[0]), &sub(&a.z, &b.z)));
            }
        }
    }
    worst
}

fn slack<S: Scalar>(a: S, b: S) -> S {
    S::lit(1e-12) * (S::one() + a.abs() + b.abs())
}

/// Smallest `r` in `r_grid` such that
/// `f(x′) ≥ f(x) + ⟨z, x′ − x⟩ − (r/2)‖x′ − x‖²` over the sampled
/// f-attentive triples; `None` if no grid value works.
pub fn prox_regularity_test<S: Scalar>(
    model: &FunctionModel<S>,
    x_bar: &[S],
    z_bar: &[S],
    eps: S,
    r_grid: &[S],
    per_axis: usize,
) -> Result<Option<S>> {
    let points = ball_lattice(x_bar, eps, per_axis);
    let f_bar = model.value(x_bar);
    let mut triples: Vec<(usize, Vec<S>)> = Vec::new();
    for (i, x) in points.iter().enumerate() {
        if (model.value(x) - f_bar).abs() > eps {
            continue;
        }
        let poly = model.subdifferential_polytope(x, S::lit(DEFAULT_ACTIVE_TOL))?;
        for g in poly.generators() {
            if norm(&sub(g, z_bar)) <= eps {
                triples.push((i, g.clone()));
            }
        }
    }
    let values: Vec<S> = points.iter().map(|p| model.value(p)).collect();
    let mut grid = r_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for r in grid {
        let ok = triples.iter().all(|(i, z)| {
            let x = &points[*i];
            points.iter().enumerate().all(|(j, xp)| {
                let d = sub(xp, x);
                let rhs = values[*i] + dot(z, &d) - r * S::lit(0.5) * dot(&d, &d);
                values[j] >= rhs - slack(values[*i], values[j])
            })
        });
        if ok {
            return Ok(Some(r));
        }
    }
    Ok(None)
}

/// Smallest `R̂` in `r_grid` with `f(x) ≥ f(x̄) − (R̂/2)‖x − x̄‖²` on a
/// `per_axis` lattice of the box; returns `(α, R̂)` with `α = f(x̄)`.
pub fn quadratic_minorant_test<S: Scalar>(
    model: &FunctionModel<S>,
    x_bar: &[S],
    r_grid: &[S],
    lower: &[S],
    upper: &[S],
    per_axis: usize,
) -> Option<(S, S)> {
    let alpha = model.value(x_bar);
    let samples: Vec<(S, S)> = box_lattice(lower, upper, per_axis)
        .into_iter()
        .map(|x| {
            let d = sub(&x, x_bar);
            (model.value(&x), dot(&d, &d))
        })
        .collect();
    let mut grid = r_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.into_iter()
        .find(|&r| samples.iter().all(|&(f, d2)| f >= alpha - r * S::lit(0.5) * d2 - slack(f, alpha)))
        .map(|r| (alpha, r))
}

/// Largest `β` in `beta_grid` with
/// `f(x′) − ⟨z, x′⟩ ≥ f(x) − ⟨z, x⟩ + β‖x′ − x‖²` on sampled `x′ ∈ B_γ(x)`.
pub fn strict_order2_test<S: Scalar>(model: &FunctionModel<S>, x: &[S], z: &[S], gamma: S, beta_grid: &[S]) -> Option<S> {
    let n = x.len();
    let base = model.value(x) - dot(z, x);
    let mut samples: Vec<(S, S)> = Vec::new();
    let dirs: Vec<Vec<S>> = sphere_directions(n, 64);
    for rho in linspace(gamma / S::lit(20.0), gamma, 20) {
        for d in &dirs {
            let xp: Vec<S> = x.iter().zip(d).map(|(&a, &b)| a + rho * b).collect();
            samples.push((model.value(&xp) - dot(z, &xp), rho * rho * dot(d, d)));
        }
    }
    for xp in ball_lattice(x, gamma, 21) {
        let d = sub(&xp, x);
        let dd = dot(&d, &d);
        if dd > S::zero() {
            samples.push((model.value(&xp) - dot(z, &xp), dd));
        }
    }
    beta_grid
        .iter()
        .copied()
        .filter(|&beta| samples.iter().all(|&(v, d2)| v >= base + beta * d2 - slack(v, base)))
        .fold(None, |acc: Option<S>, b| Some(acc.map_or(b, |a| a.max(b))))
}

/// `0.01, 0.02, …, 4.00`.
pub fn default_beta_grid<S: Scalar>() -> Vec<S> {
    (1..=400).map(|k| S::lit(k as f64 * 0.01)).collect()
}

/// `0, 0.25, 0.5, …, 10`.
pub fn default_r_grid<S: Scalar>() -> Vec<S> {
    (0..=40).map(|k| S::lit(k as f64 * 0.25)).collect()
}

/// JSON-friendly summary of a verdict (probes omitted).
#[derive(Debug, Clone, Serialize)]
pub struct VerdictSummary {
    pub stable: bool,
    pub inconclusive: bool,
    pub lipschitz_estimate: f64,
    pub witness: Option<Vec<f64>>,
    pub grid_radius: f64,
    pub origin_error: f64,
    pub probes: usize,
}

impl<S: Scalar> StabilityVerdict<S> {
    pub fn summary(&self) -> VerdictSummary {
        VerdictSummary {
            stable: self.stable,
            inconclusive: self.inconclusive,
            lipschitz_estimate: self.lipschitz_estimate.to_f64_lossy(),
            witness: self.witness.as_ref().map(|w| to_f64_vec(w)),
            grid_radius: self.grid_radius.to_f64_lossy(),
            origin_error: self.origin_error.to_f64_lossy(),
            probes: self.probes.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::builtin;

    fn cfg() -> SolverConfig<f64> {
        SolverConfig::default()
    }

    #[test]
    fn quadratic_tilt() {
        let m: FunctionModel<f64> = builtin("quadratic(I)").unwrap();
        let r = tilt_map(&m, &[0.0, 0.0], 1.0, &[0.1, 0.2], &cfg());
        assert!(r.single_valued);
        assert!((r.minimizers[0][0] - 0.1).abs() < 1e-10 && (r.minimizers[0][1] - 0.2).abs() < 1e-10);
    }

    #[test]
    fn abs_diff_flat_argmin() {
        let m: FunctionModel<f64> = builtin("abs_diff").unwrap();
        let r = tilt_map(&m, &[0.0, 0.0], 1.0, &[0.0, 0.0], &cfg());
        assert!(!r.single_valued);
        for x in &r.minimizers {
            assert!((x[0] - x[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn abs_plus_quad_tilt() {
        let m: FunctionModel<f64> = builtin("abs_plus_quad").unwrap();
        let r = tilt_map(&m, &[0.0, 0.0], 1.0, &[0.1, 0.1], &cfg());
        assert!(r.single_valued);
        assert!((r.minimizers[0][0] - 0.05).abs() < 1e-10 && (r.minimizers[0][1] - 0.05).abs() < 1e-10);
    }

    #[test]
    fn stability_verdicts() {
        let m: FunctionModel<f64> = builtin("quadratic(diag(1,10))").unwrap();
        let v = tilt_stability_test(&m, &[0.0, 0.0], 1.0, 0.1, 11, &cfg()).unwrap();
        assert!(v.stable);
        assert!((v.lipschitz_estimate - 1.0).abs() < 1e-6);
        let m: FunctionModel<f64> = builtin("abs_diff").unwrap();
        let v = tilt_stability_test(&m, &[0.0, 0.0], 1.0, 0.1, 5, &cfg()).unwrap();
        assert!(!v.stable);
        assert_eq!(v.witness, Some(vec![0.0, 0.0]));
    }

    #[test]
    fn stability_needs_zero_subgradient() {
        let m: FunctionModel<f64> = builtin("quadratic(I)").unwrap();
        assert!(matches!(
            tilt_stability_test(&m, &[1.0, 0.0], 1.0, 0.1, 3, &cfg()),
            Err(Error::PreconditionFailed(_))
        ));
    }

    #[test]
    fn minorant_and_order_two() {
        let m: FunctionModel<f64> = builtin("abs_diff").unwrap();
        let grid = default_r_grid();
        let q = quadratic_minorant_test(&m, &[0.0, 0.0], &grid, &[-1.0, -1.0], &[1.0, 1.0], 21).unwrap();
        assert_eq!(q, (0.0, 0.0));
        assert_eq!(strict_order2_test(&m, &[0.0, 0.0], &[0.0, 0.0], 0.5, &default_beta_grid()), None);
        let m: FunctionModel<f64> = builtin("quadratic(I)").unwrap();
        let b = strict_order2_test(&m, &[0.0, 0.0], &[0.0, 0.0], 0.5, &default_beta_grid()).unwrap();
        assert!((b - 0.5).abs() < 1e-12);
    }

    #[test]
    fn convex_models_are_prox_regular_with_zero() {
        let m: FunctionModel<f64> = builtin("abs_plus_quad").unwrap();
        let r = prox_regularity_test(&m, &[0.0, 0.0], &[0.0, 0.0], 1.0, &default_r_grid(), 9).unwrap();
        assert_eq!(r, Some(0.0));
    }
}
