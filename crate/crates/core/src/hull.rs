//! Nearest points in convex hulls of finitely many generators.
//!
//! Wolfe's minimum-norm-point algorithm: finite, exact up to rounding, and
//! small enough to run inside inner loops.

use crate::linalg::{dot, norm, solve, sub, Matrix};
use crate::scalar::Scalar;

/// Result of a hull projection.
#[derive(Debug, Clone)]
pub struct HullProjection<S> {
    /// Nearest point of `co(generators)` to the query.
    pub point: Vec<S>,
    /// Convex weights over the generators (same order as the input).
    pub weights: Vec<S>,
    pub distance: S,
}

/// Projects `target` onto the convex hull of `generators`.
pub fn project_onto_hull<S: Scalar>(generators: &[Vec<S>], target: &[S]) -> HullProjection<S> {
    assert!(!generators.is_empty(), "hull of no generators");
    let shifted: Vec<Vec<S>> = generators.iter().map(|g| sub(g, target)).collect();
    let (x, weights) = min_norm_point(&shifted);
    let point = x.iter().zip(target).map(|(&a, &b)| a + b).collect();
    HullProjection { distance: norm(&x), point, weights }
}

/// Distance from `target` to the convex hull of `generators`.
pub fn hull_distance<S: Scalar>(generators: &[Vec<S>], target: &[S]) -> S {
    project_onto_hull(generators, target).distance
}

fn min_norm_point<S: Scalar>(points: &[Vec<S>]) -> (Vec<S>, Vec<S>) {
    let m = points.len();
    let scale = points.iter().map(|p| dot(p, p)).fold(S::zero(), S::max).max(S::min_positive_value());
    let tol = S::lit(1e-15) * scale;

    let start = (0..m)
        .min_by(|&a, &b| dot(&points[a], &points[a]).partial_cmp(&dot(&points[b], &points[b])).unwrap())
        .unwrap();
    let mut active: Vec<usize> = vec![start];
    let mut lambda: Vec<S> = vec![S::one()];
    let mut x = points[start].clone();

    for _major in 0..(50 * m + 50) {
        let xx = dot(&x, &x);
        let (j, best) = (0..m)
            .map(|j| (j, dot(&x, &points[j])))
            .fold((usize::MAX, S::infinity()), |b, c| if c.1 < b.1 { c } else { b });
        if best >= xx - tol || active.contains(&j) {
            break;
        }
        active.push(j);
        lambda.push(S::zero());

        for _minor in 0..(m + 5) {
            let w = affine_min_norm(points, &active);
            if w.iter().all(|&wi| wi > S::zero()) {
                lambda = w;
                break;
            }
            // step from lambda toward w until a weight hits zero
            let mut theta = S::one();
            for (l, wi) in lambda.iter().zip(&w) {
                if *wi <= S::zero() {
                    let denom = *l - *wi;
                    if denom > S::zero() {
                        theta = theta.min(*l / denom);
                    }
                }
            }
            for (l, wi) in lambda.iter_mut().zip(&w) {
                *l = theta * *wi + (S::one() - theta) * *l;
            }
            let mut keep_active = Vec::with_capacity(active.len());
            let mut keep_lambda = Vec::with_capacity(active.len());
            for (&a, &l) in active.iter().zip(&lambda) {
                if l > S::lit(1e-14) {
                    keep_active.push(a);
                    keep_lambda.push(l);
                }
            }
            if keep_active.is_empty() {
                keep_active.push(active[0]);
                keep_lambda.push(S::one());
            }
            active = keep_active;
            let total: S = keep_lambda.iter().copied().sum();
            lambda = keep_lambda.into_iter().map(|l| l / total).collect();
        }
        x = combine(points, &active, &lambda);
    }
    x = combine(points, &active, &lambda);
    let mut weights = vec![S::zero(); m];
    for (&a, &l) in active.iter().zip(&lambda) {
        weights[a] = weights[a] + l;
    }
    (x, weights)
}

fn combine<S: Scalar>(points: &[Vec<S>], active: &[usize], lambda: &[S]) -> Vec<S> {
    let n = points[0].len();
    let mut x = vec![S::zero(); n];
    for (&a, &l) in active.iter().zip(lambda) {
        for i in 0..n {
            x[i] = x[i] + l * points[a][i];
        }
    }
    x
}

/// Weights of the minimum-norm point of the affine hull of `points[active]`.
fn affine_min_norm<S: Scalar>(points: &[Vec<S>], active: &[usize]) -> Vec<S> {
    let k = active.len();
    let mut a = Matrix::zeros(k + 1, k + 1);
    let mut trace = S::zero();
    for (r, &i) in active.iter().enumerate() {
        for (c, &j) in active.iter().enumerate() {
            a[(r, c)] = dot(&points[i], &points[j]);
        }
        trace = trace + a[(r, r)];
        a[(r, k)] = S::one();
        a[(k, r)] = S::one();
    }
    let mut rhs = vec![S::zero(); k + 1];
    rhs[k] = S::one();
    if let Some(sol) = solve(&a, &rhs) {
        return sol[..k].to_vec();
    }
    let reg = (trace / S::from_count(k.max(1))).max(S::one()) * S::lit(1e-12);
    for r in 0..k {
        a[(r, r)] = a[(r, r)] + reg;
    }
    solve(&a, &rhs).map(|s| s[..k].to_vec()).unwrap_or_else(|| {
        let mut w = vec![S::zero(); k];
        w[0] = S::one();
        w
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_inside_segment() {
        let g: Vec<Vec<f64>> = vec![vec![0.0, 1.0 - 5f64.sqrt()], vec![0.0, 1.0]];
        let p = project_onto_hull(&g, &[0.0, 0.0]);
        assert!(p.distance < 1e-15);
        // 0 = α(1−√5) + (1−α) ⇒ α = 1/√5
        assert!((p.weights[0] - 1.0 / 5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn point_outside_square() {
        let g: Vec<Vec<f64>> = vec![vec![1.0, 1.0], vec![-1.0, 1.0], vec![1.0, -1.0], vec![-1.0, -1.0]];
        let p = project_onto_hull(&g, &[3.0, 0.5]);
        assert!((p.distance - 2.0).abs() < 1e-14);
        assert!((p.point[0] - 1.0).abs() < 1e-14 && (p.point[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn nearest_vertex() {
        let g: Vec<Vec<f64>> = vec![vec![1.0, 0.0], vec![2.0, 1.0], vec![2.0, -1.0]];
        let p = project_onto_hull(&g, &[0.0, 0.0]);
        assert!((p.distance - 1.0).abs() < 1e-15);
        assert!((p.weights[0] - 1.0).abs() < 1e-15);
    }
}
