//! Dense two-phase simplex for `min cᵀλ s.t. Aλ = b, λ ≥ 0` with few rows
//! and many columns.
//!
//! The basis is at most a handful of columns, so it is refactored from
//! scratch every iteration; pricing is Dantzig's rule with a switch to
//! Bland's rule after a run of degenerate pivots.

use crate::linalg::{solve, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome<S> {
    Optimal { value: S, basis: Vec<(usize, S)> },
    Infeasible,
}

/// Solves the standard-form LP. `columns[j]` is column `j` of `A`.
pub fn solve_standard<S: Scalar>(columns: &[Vec<S>], b: &[S], c: &[S]) -> LpOutcome<S> {
    let m = b.len();
    let n = columns.len();
    // flip rows so that b ≥ 0; artificials are the unit columns n..n+m
    let signs: Vec<S> = b.iter().map(|&v| if v < S::zero() { -S::one() } else { S::one() }).collect();
    let flipped: Vec<Vec<S>> =
        columns.iter().map(|c| c.iter().zip(&signs).map(|(&a, &s)| a * s).collect()).collect();
    let col = |j: usize| -> Vec<S> {
        if j < n {
            flipped[j].clone()
        } else {
            let mut e = vec![S::zero(); m];
            e[j - n] = S::one();
            e
        }
    };
    let rhs: Vec<S> = b.iter().zip(&signs).map(|(&v, &s)| v * s).collect();
    let scale_b = S::one() + rhs.iter().fold(S::zero(), |a, v| a.max(v.abs()));
    let mut basis: Vec<usize> = (n..n + m).collect();

    let phase1_cost = |j: usize| if j >= n { S::one() } else { S::zero() };
    if !run_phase(&col, &flipped, &rhs, &mut basis, &phase1_cost) {
        return LpOutcome::Infeasible;
    }
    let xb = basic_solution(&col, &basis, &rhs);
    let infeas: S = basis.iter().zip(&xb).filter(|(&j, _)| j >= n).map(|(_, &x)| x.abs()).sum();
    if infeas > S::lit(1e-9) * scale_b {
        return LpOutcome::Infeasible;
    }
    // pivot zero-level artificials out where possible
    for r in 0..m {
        if basis[r] < n {
            continue;
        }
        let bm = basis_matrix(&col, &basis, m);
        for j in 0..n {
            if basis.contains(&j) {
                continue;
            }
            if let Some(d) = solve(&bm, &col(j)) {
                if d[r].abs() > S::lit(1e-9) {
                    basis[r] = j;
                    break;
                }
            }
        }
    }
    let finite_cost = |j: usize| if j >= n { S::zero() } else { c[j] };
    if !run_phase(&col, &flipped, &rhs, &mut basis, &finite_cost) {
        return LpOutcome::Infeasible;
    }
    let xb = basic_solution(&col, &basis, &rhs);
    let value = basis.iter().zip(&xb).map(|(&j, &x)| finite_cost(j) * x).sum();
    LpOutcome::Optimal { value, basis: basis.iter().copied().zip(xb).filter(|(j, _)| *j < n).collect() }
}

fn basis_matrix<S: Scalar, F: Fn(usize) -> Vec<S>>(col: &F, basis: &[usize], m: usize) -> Matrix<S> {
    let cols: Vec<Vec<S>> = basis.iter().map(|&j| col(j)).collect();
    Matrix::from_columns(m, &cols)
}

fn basic_solution<S: Scalar, F: Fn(usize) -> Vec<S>>(col: &F, basis: &[usize], rhs: &[S]) -> Vec<S> {
    let bm = basis_matrix(col, basis, rhs.len());
    solve(&bm, rhs).unwrap_or_else(|| vec![S::nan(); rhs.len()])
}

fn run_phase<S: Scalar, F: Fn(usize) -> Vec<S>, C: Fn(usize) -> S>(
    col: &F,
    flipped: &[Vec<S>],
    rhs: &[S],
    basis: &mut [usize],
    cost: &C,
) -> bool {
    let m = rhs.len();
    let n = flipped.len();
    let cost_scale = S::one() + (0..n).map(|j| cost(j).abs()).fold(S::zero(), S::max);
    let tol = S::lit(1e-11) * cost_scale;
    let mut degenerate_run = 0usize;
    for _ in 0..(50 * (n + m) + 100) {
        let bm = basis_matrix(col, basis, m);
        let xb = match solve(&bm, rhs) {
            Some(x) => x,
            None => return false,
        };
        let cb: Vec<S> = basis.iter().map(|&j| cost(j)).collect();
        let y = match solve(&bm.transpose(), &cb) {
            Some(y) => y,
            None => return false,
        };
        let bland = degenerate_run > 20;
        let mut entering: Option<(usize, S)> = None;
        // artificials never re-enter
        for j in 0..n {
            if basis.contains(&j) {
                continue;
            }
            let r = cost(j) - flipped[j].iter().zip(&y).map(|(&ai, &yi)| ai * yi).sum::<S>();
            if r < -tol {
                if bland {
                    entering = Some((j, r));
                    break;
                }
                if entering.map_or(true, |(_, best)| r < best) {
                    entering = Some((j, r));
                }
            }
        }
        let Some((j, _)) = entering else { return true };
        let d = match solve(&bm, &col(j)) {
            Some(d) => d,
            None => return false,
        };
        let mut leave: Option<(usize, S)> = None;
        for r in 0..m {
            if d[r] > S::lit(1e-12) {
                let ratio = xb[r].max(S::zero()) / d[r];
                let better = match leave {
                    None => true,
                    Some((lr, best)) => ratio < best || (ratio == best && basis[r] < basis[lr]),
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        let Some((r, ratio)) = leave else {
            // unbounded direction: cannot happen for the bounded problems used here
            return false;
        };
        degenerate_run = if ratio <= S::lit(1e-15) { degenerate_run + 1 } else { 0 };
        basis[r] = j;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_of_two_nodes() {
        // min λ₁·0 + λ₂·4 + λ₃·1 with nodes −1, 1, 0 reaching x = 0.5
        let cols: Vec<Vec<f64>> = vec![vec![-1.0, 1.0], vec![1.0, 1.0], vec![0.0, 1.0]];
        match solve_standard(&cols, &[0.5, 1.0], &[0.0, 4.0, 1.0]) {
            LpOutcome::Optimal { value, .. } => assert!((value - 2.5).abs() < 1e-12),
            LpOutcome::Infeasible => panic!("feasible"),
        }
    }

    #[test]
    fn infeasible_point() {
        let cols: Vec<Vec<f64>> = vec![vec![0.0, 1.0], vec![1.0, 1.0]];
        assert_eq!(solve_standard(&cols, &[2.0, 1.0], &[0.0, 0.0]), LpOutcome::Infeasible);
    }
}
