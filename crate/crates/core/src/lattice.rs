//! Deterministic sample sets: direction fans, box lattices, ball lattices.
//!
//! Every sampling-based check in the crate draws from these, so runs are
//! reproducible without any RNG.

use crate::linalg::{norm, scale};
use crate::scalar::Scalar;

/// Unit directions in `ℝⁿ`.
///
/// * `n = 1`: `{+1, −1}`.
/// * `n = 2`: `count` equally spaced angles starting at 0.
/// * `n = 3`: Fibonacci sphere with `count` points plus the six axis directions.
/// * `n ≥ 4`: ± axes and ± normalized pairwise sums/differences.
pub fn sphere_directions<S: Scalar>(n: usize, count: usize) -> Vec<Vec<S>> {
    match n {
        0 => Vec::new(),
        1 => vec![vec![S::one()], vec![-S::one()]],
        2 => {
            let count = count.max(4);
            (0..count)
                .map(|j| {
                    let theta = 2.0 * std::f64::consts::PI * j as f64 / count as f64;
                    vec![S::lit(theta.cos()), S::lit(theta.sin())]
                })
                .collect()
        }
        3 => {
            let mut out: Vec<Vec<S>> = Vec::new();
            for axis in 0..3 {
                for sign in [1.0, -1.0] {
                    let mut e = vec![S::zero(); 3];
                    e[axis] = S::lit(sign);
                    out.push(e);
                }
            }
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            let count = count.max(8);
            for j in 0..count {
                let y = 1.0 - 2.0 * (j as f64 + 0.5) / count as f64;
                let r = (1.0 - y * y).sqrt();
                let phi = golden * j as f64;
                out.push(vec![S::lit(r * phi.cos()), S::lit(y), S::lit(r * phi.sin())]);
            }
            out
        }
        _ => {
            let mut out = Vec::new();
            let inv = S::lit(std::f64::consts::FRAC_1_SQRT_2);
            for i in 0..n {
                for sign in [S::one(), -S::one()] {
                    let mut e = vec![S::zero(); n];
                    e[i] = sign;
                    out.push(e);
                }
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                        let mut e = vec![S::zero(); n];
                        e[i] = S::lit(si) * inv;
                        e[j] = S::lit(sj) * inv;
                        out.push(e);
                    }
                }
            }
            out
        }
    }
}

/// All nonzero vectors of `{−1, 0, 1}^d`, normalized. Pattern-search poll set.
pub fn cube_directions<S: Scalar>(d: usize) -> Vec<Vec<S>> {
    if d == 0 {
        return Vec::new();
    }
    if d > 5 {
        return sphere_directions(d, 0);
    }
    let total = 3usize.pow(d as u32);
    let mut out = Vec::with_capacity(total - 1);
    // axis directions first so smooth separable problems poll them early
    for i in 0..d {
        for sign in [S::one(), -S::one()] {
            let mut e = vec![S::zero(); d];
            e[i] = sign;
            out.push(e);
        }
    }
    for code in 0..total {
        let mut v = Vec::with_capacity(d);
        let mut c = code;
        let mut nonzero = 0;
        for _ in 0..d {
            let digit = c % 3;
            c /= 3;
            let x = match digit {
                0 => S::zero(),
                1 => S::one(),
                _ => -S::one(),
            };
            if digit != 0 {
                nonzero += 1;
            }
            v.push(x);
        }
        if nonzero >= 2 {
            let nv = norm(&v);
            out.push(scale(&v, S::one() / nv));
        }
    }
    out
}

/// Uniform points per axis from `lower` to `upper` (inclusive), row-major
/// with the last axis fastest.
pub fn box_lattice<S: Scalar>(lower: &[S], upper: &[S], per_axis: usize) -> Vec<Vec<S>> {
    let d = lower.len();
    if d == 0 {
        return vec![Vec::new()];
    }
    let axes: Vec<Vec<S>> = (0..d).map(|i| linspace(lower[i], upper[i], per_axis)).collect();
    let total = per_axis.pow(d as u32);
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut p = vec![S::zero(); d];
        for axis in (0..d).rev() {
            p[axis] = axes[axis][rem % per_axis];
            rem /= per_axis;
        }
        out.push(p);
    }
    out
}

/// Lattice points of the cube `center ± radius` lying in the closed ball.
pub fn ball_lattice<S: Scalar>(center: &[S], radius: S, per_axis: usize) -> Vec<Vec<S>> {
    let lower: Vec<S> = center.iter().map(|&c| c - radius).collect();
    let upper: Vec<S> = center.iter().map(|&c| c + radius).collect();
    let slack = radius * S::lit(1e-12);
    box_lattice(&lower, &upper, per_axis)
        .into_iter()
        .filter(|p| {
            let d: Vec<S> = p.iter().zip(center).map(|(&a, &b)| a - b).collect();
            norm(&d) <= radius + slack
        })
        .collect()
}

/// `count` evenly spaced points from `a` to `b` inclusive; the midpoint of
/// an odd-length symmetric range is exactly zero.
pub fn linspace<S: Scalar>(a: S, b: S, count: usize) -> Vec<S> {
    match count {
        0 => Vec::new(),
        1 => vec![(a + b) * S::lit(0.5)],
        _ => {
            let last = S::from_count(count - 1);
            (0..count)
                .map(|i| {
                    let t = S::from_count(i);
                    // symmetric formula so that linspace(-r, r, odd) hits 0 exactly
                    (a * (last - t) + b * t) / last
                })
                .collect()
        }
    }
}

/// Geometric schedule `start, start·ratio, …` down to `end` (inclusive bound).
pub fn geometric<S: Scalar>(start: S, end: S, ratio: S) -> Vec<S> {
    let mut out = Vec::new();
    let mut t = start;
    while t >= end * (S::one() - S::lit(1e-12)) && out.len() < 200 {
        out.push(t);
        t = t * ratio;
    }
    out
}
