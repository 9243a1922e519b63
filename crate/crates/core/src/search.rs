//! Deterministic multistart minimization over a ball.
//!
//! Every inner problem of the laboratory (tilt map, `v(u)`, prox points) has
//! the form `min_{‖y‖≤r} f(origin + M y) − ⟨tilt, M y⟩ (+ ‖x − c‖²/(2λ))`.
//! Starts come from a fixed lattice; each start runs a compass pattern search
//! over the `{−1,0,1}^d` directions and then, for structured models, a Newton
//! solve of the KKT system of `min t s.t. φᵢ(y) = t` on a guessed active set.
//! The polish turns a point that is only near a curved kink into the kink
//! itself, which pattern search alone approaches very slowly.

use serde::{Deserialize, Serialize};

use crate::lattice::{box_lattice, cube_directions};
use crate::linalg::{dot, norm, solve, Matrix};
use crate::oracle::FunctionModel;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig<S> {
    /// Start lattice points per axis (over the half-radius cube).
    pub starts_per_axis: usize,
    /// Poll rounds per start.
    pub max_iters: usize,
    /// Pattern search stops once the step falls below `step_tol · radius`.
    pub step_tol: S,
    pub polish: bool,
}

impl<S: Scalar> Default for SolverConfig<S> {
    fn default() -> Self {
        SolverConfig { starts_per_axis: 3, max_iters: 500, step_tol: S::lit(1e-13), polish: true }
    }
}

/// `y ↦ f(origin + M y) − ⟨tilt, M y⟩ + ‖origin + M y − c‖²/(2λ)`.
#[derive(Clone)]
pub struct BallObjective<'a, S> {
    pub model: &'a FunctionModel<S>,
    pub origin: Vec<S>,
    /// `n × d`; the search variable lives in `ℝ^d`.
    pub map: Matrix<S>,
    pub tilt: Vec<S>,
    pub prox: Option<(Vec<S>, S)>,
}

struct Jet<S> {
    value: S,
    gradient: Vec<S>,
    hessian: Matrix<S>,
}

impl<'a, S: Scalar> BallObjective<'a, S> {
    /// Full-space objective `x ↦ f(x) − ⟨tilt, x − origin⟩`.
    pub fn full(model: &'a FunctionModel<S>, origin: Vec<S>, tilt: Vec<S>) -> Self {
        let n = model.dim();
        BallObjective { model, origin, map: Matrix::identity(n), tilt, prox: None }
    }

    pub fn dim(&self) -> usize {
        self.map.cols()
    }

    pub fn point(&self, y: &[S]) -> Vec<S> {
        if y.is_empty() {
            return self.origin.clone();
        }
        let my = self.map.mul_vec(y);
        self.origin.iter().zip(&my).map(|(&a, &b)| a + b).collect()
    }

    pub fn value(&self, y: &[S]) -> S {
        let x = self.point(y);
        let shift: Vec<S> = x.iter().zip(&self.origin).map(|(&a, &b)| a - b).collect();
        let mut v = self.model.value(&x) - dot(&self.tilt, &shift);
        if let Some((c, lambda)) = &self.prox {
            let d: Vec<S> = x.iter().zip(c).map(|(&a, &b)| a - b).collect();
            v = v + dot(&d, &d) / (S::lit(2.0) * *lambda);
        }
        v
    }

    fn jets(&self, y: &[S]) -> Option<Vec<Jet<S>>> {
        let x = self.point(y);
        let pieces = self.model.piece_jets(&x)?;
        let n = x.len();
        let shift: Vec<S> = x.iter().zip(&self.origin).map(|(&a, &b)| a - b).collect();
        let tilt_value = dot(&self.tilt, &shift);
        let mut out = Vec::with_capacity(pieces.len());
        for p in pieces {
            let mut h = p.hessian?;
            let mut g: Vec<S> = p.gradient.iter().zip(&self.tilt).map(|(&a, &b)| a - b).collect();
            let mut value = p.value - tilt_value;
            if let Some((c, lambda)) = &self.prox {
                let d: Vec<S> = x.iter().zip(c).map(|(&a, &b)| a - b).collect();
                value = value + dot(&d, &d) / (S::lit(2.0) * *lambda);
                for i in 0..n {
                    g[i] = g[i] + d[i] / *lambda;
                    h[(i, i)] = h[(i, i)] + S::one() / *lambda;
                }
            }
            let gy = self.map.tr_mul_vec(&g);
            let hy = self.map.transpose().mul(&h).mul(&self.map);
            out.push(Jet { value, gradient: gy, hessian: hy });
        }
        Some(out)
    }
}

/// Outcome of one start.
#[derive(Debug, Clone)]
pub struct LocalResult<S> {
    pub y: Vec<S>,
    pub value: S,
    pub iterations: usize,
    /// The start used its whole poll budget and the polish did not certify
    /// the point.
    pub budget_exceeded: bool,
    pub polished: bool,
}

/// All starts, in lattice order.
#[derive(Debug, Clone)]
pub struct MultistartResult<S> {
    pub locals: Vec<LocalResult<S>>,
    pub radius: S,
}

impl<S: Scalar> MultistartResult<S> {
    pub fn best(&self) -> &LocalResult<S> {
        let mut best = &self.locals[0];
        for l in &self.locals[1..] {
            if l.value < best.value {
                best = l;
            }
        }
        best
    }

    pub fn budget_exceeded(&self) -> bool {
        self.locals.iter().any(|l| l.budget_exceeded)
    }

    /// Distinct near-optimal points: values within
    /// `cluster_tol·(1+|best|)` of the best, pairwise at least `sep_tol`
    /// apart. Ordered by norm, then lexicographically.
    pub fn minimizers(&self, cluster_tol: S, sep_tol: S) -> Vec<(Vec<S>, S)> {
        let best = self.best().value;
        let cut = best + cluster_tol * (S::one() + best.abs());
        let mut cands: Vec<(Vec<S>, S)> =
            self.locals.iter().filter(|l| l.value <= cut).map(|l| (l.y.clone(), l.value)).collect();
        cands.sort_by(|a, b| order_points(&a.0, &b.0));
        let mut out: Vec<(Vec<S>, S)> = Vec::new();
        for c in cands {
            let far = out.iter().all(|o| {
                let d: Vec<S> = o.0.iter().zip(&c.0).map(|(&a, &b)| a - b).collect();
                norm(&d) >= sep_tol
            });
            if far {
                out.push(c);
            }
        }
        out
    }

    /// Tie-broken selection: smallest norm, then lexicographic, among the
    /// near-optimal points.
    pub fn selection(&self, cluster_tol: S) -> (Vec<S>, S) {
        self.minimizers(cluster_tol, S::zero()).into_iter().next().expect("at least one start")
    }
}

fn order_points<S: Scalar>(a: &[S], b: &[S]) -> std::cmp::Ordering {
    let na = norm(a);
    let nb = norm(b);
    let scale = S::one() + na.max(nb);
    if (na - nb).abs() > S::lit(1e-12) * scale {
        return na.partial_cmp(&nb).unwrap_or(std::cmp::Ordering::Equal);
    }
    for (x, y) in a.iter().zip(b) {
        if (*x - *y).abs() > S::lit(1e-12) * scale {
            return x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal);
        }
    }
    std::cmp::Ordering::Equal
}

fn project_ball<S: Scalar>(y: &mut [S], radius: S) {
    let n = norm(y);
    if n > radius {
        let s = radius / n;
        for v in y.iter_mut() {
            *v = *v * s;
        }
    }
}

/// Minimizes the objective over `‖y‖ ≤ radius` from every lattice start.
pub fn minimize_in_ball<S: Scalar>(obj: &BallObjective<'_, S>, radius: S, cfg: &SolverConfig<S>) -> MultistartResult<S> {
    let d = obj.dim();
    if d == 0 {
        let value = obj.value(&[]);
        return MultistartResult {
            locals: vec![LocalResult { y: Vec::new(), value, iterations: 0, budget_exceeded: false, polished: false }],
            radius,
        };
    }
    let half = radius * S::lit(0.5);
    let lower = vec![-half; d];
    let upper = vec![half; d];
    let starts = box_lattice(&lower, &upper, cfg.starts_per_axis.max(1));
    let dirs: Vec<Vec<S>> = cube_directions(d);
    let locals = starts.into_iter().map(|s| local_search(obj, s, radius, &dirs, cfg)).collect();
    MultistartResult { locals, radius }
}

/// Minimizes an arbitrary function over a ball around `center` by the same
/// multistart pattern search (no polish).
pub fn minimize_function<S: Scalar, F: Fn(&[S]) -> S>(f: F, center: &[S], radius: S, cfg: &SolverConfig<S>) -> (Vec<S>, S) {
    let d = center.len();
    if d == 0 {
        return (Vec::new(), f(&[]));
    }
    let half = radius * S::lit(0.5);
    let lower: Vec<S> = center.iter().map(|&c| c - half).collect();
    let upper: Vec<S> = center.iter().map(|&c| c + half).collect();
    let dirs: Vec<Vec<S>> = cube_directions(d);
    let g = |y: &[S]| {
        let x: Vec<S> = y.iter().zip(center).map(|(&a, &b)| a + b).collect();
        f(&x)
    };
    let mut best: Option<(Vec<S>, S)> = None;
    for s in box_lattice(&lower, &upper, cfg.starts_per_axis.max(1)) {
        let y0: Vec<S> = s.iter().zip(center).map(|(&a, &b)| a - b).collect();
        let (y, v, _) = pattern_search(&g, y0, radius, &dirs, cfg);
        if best.as_ref().map_or(true, |b| v < b.1) {
            best = Some((y, v));
        }
    }
    let (y, v) = best.expect("nonempty lattice");
    (y.iter().zip(center).map(|(&a, &b)| a + b).collect(), v)
}

fn pattern_search<S: Scalar, F: Fn(&[S]) -> S>(
    f: &F,
    mut y: Vec<S>,
    radius: S,
    dirs: &[Vec<S>],
    cfg: &SolverConfig<S>,
) -> (Vec<S>, S, usize) {
    project_ball(&mut y, radius);
    let mut fy = f(&y);
    let initial = radius * S::lit(0.25);
    let mut step = initial;
    let floor = cfg.step_tol * radius.max(S::min_positive_value());
    let mut iters = 0;
    while step > floor && iters < cfg.max_iters {
        iters += 1;
        let mut best: Option<(Vec<S>, S)> = None;
        for d in dirs {
            let mut trial: Vec<S> = y.iter().zip(d).map(|(&a, &b)| a + step * b).collect();
            project_ball(&mut trial, radius);
            let ft = f(&trial);
            if ft < fy && best.as_ref().map_or(true, |b| ft < b.1) {
                best = Some((trial, ft));
            }
        }
        match best {
            Some((t, ft)) => {
                y = t;
                fy = ft;
                step = (step * S::lit(2.0)).min(initial);
            }
            None => step = step * S::lit(0.5),
        }
    }
    (y, fy, iters)
}

fn local_search<S: Scalar>(
    obj: &BallObjective<'_, S>,
    start: Vec<S>,
    radius: S,
    dirs: &[Vec<S>],
    cfg: &SolverConfig<S>,
) -> LocalResult<S> {
    let f = |y: &[S]| obj.value(y);
    let (y, value, iterations) = pattern_search(&f, start, radius, dirs, cfg);
    let exhausted = iterations >= cfg.max_iters;
    if cfg.polish {
        if let Some((py, pv)) = kkt_polish(obj, &y, value, radius) {
            return LocalResult { y: py, value: pv, iterations, budget_exceeded: false, polished: true };
        }
    }
    LocalResult { y, value, iterations, budget_exceeded: exhausted, polished: false }
}

/// Newton on the KKT system of `min t s.t. φᵢ(y) = t (i ∈ A), Σλᵢ∇φᵢ = 0,
/// Σλᵢ = 1` for several guessed active sets `A`.
fn kkt_polish<S: Scalar>(obj: &BallObjective<'_, S>, y0: &[S], v0: S, radius: S) -> Option<(Vec<S>, S)> {
    let jets = obj.jets(y0)?;
    let d = y0.len();
    let top = jets.iter().map(|j| j.value).fold(S::neg_infinity(), S::max);
    let mut tried: Vec<Vec<usize>> = Vec::new();
    let mut best: Option<(Vec<S>, S)> = None;
    for tol in [1e-11, 1e-9, 1e-7, 1e-5, 1e-3] {
        let slack = S::lit(tol) * (S::one() + top.abs());
        let active: Vec<usize> = (0..jets.len()).filter(|&i| top - jets[i].value <= slack).collect();
        if active.len() > d + 1 || tried.contains(&active) {
            continue;
        }
        tried.push(active.clone());
        if let Some(y) = newton_kkt(obj, y0, &active, top) {
            if norm(&y) > radius * (S::one() + S::lit(1e-12)) {
                continue;
            }
            let v = obj.value(&y);
            let accept = v <= v0 + S::lit(1e-12) * (S::one() + v0.abs());
            if accept && best.as_ref().map_or(true, |b| v < b.1) {
                best = Some((y, v));
            }
        }
    }
    best
}

fn newton_kkt<S: Scalar>(obj: &BallObjective<'_, S>, y0: &[S], active: &[usize], t0: S) -> Option<Vec<S>> {
    let d = y0.len();
    let k = active.len();
    let m = d + k + 1;
    let mut y = y0.to_vec();
    let mut lambda = vec![S::one() / S::from_count(k); k];
    let mut t = t0;
    for _ in 0..40 {
        let jets = obj.jets(&y)?;
        let mut f = vec![S::zero(); m];
        let mut jac = Matrix::zeros(m, m);
        for (a, &i) in active.iter().enumerate() {
            let j = &jets[i];
            for r in 0..d {
                f[r] = f[r] + lambda[a] * j.gradient[r];
                for c in 0..d {
                    jac[(r, c)] = jac[(r, c)] + lambda[a] * j.hessian[(r, c)];
                }
                jac[(r, d + a)] = j.gradient[r];
                jac[(d + a, r)] = j.gradient[r];
            }
            f[d + a] = j.value - t;
            jac[(d + a, d + k)] = -S::one();
            jac[(d + k, d + a)] = S::one();
        }
        f[d + k] = lambda.iter().copied().sum::<S>() - S::one();
        let scale = S::one() + t.abs() + jets.iter().map(|j| norm(&j.gradient)).fold(S::zero(), S::max);
        let res = norm(&f);
        if res <= S::lit(1e-14) * scale {
            break;
        }
        let neg: Vec<S> = f.iter().map(|&x| -x).collect();
        let step = solve(&jac, &neg)?;
        for r in 0..d {
            y[r] = y[r] + step[r];
        }
        for a in 0..k {
            lambda[a] = lambda[a] + step[d + a];
        }
        t = t + step[d + k];
        if !norm(&step).is_finite() {
            return None;
        }
    }
    // verify: stationarity, multipliers, and no inactive piece above the level
    let jets = obj.jets(&y)?;
    let top = jets.iter().map(|j| j.value).fold(S::neg_infinity(), S::max);
    let scale = S::one() + top.abs();
    if lambda.iter().any(|&l| l < -S::lit(1e-9)) {
        return None;
    }
    for &i in active {
        if (jets[i].value - top).abs() > S::lit(1e-10) * scale {
            return None;
        }
    }
    let mut grad = vec![S::zero(); d];
    for (a, &i) in active.iter().enumerate() {
        for r in 0..d {
            grad[r] = grad[r] + lambda[a] * jets[i].gradient[r];
        }
    }
    let gscale = S::one() + jets.iter().map(|j| norm(&j.gradient)).fold(S::zero(), S::max);
    if norm(&grad) > S::lit(1e-9) * gscale {
        return None;
    }
    Some(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{builtin, crossing_base_point};

    #[test]
    fn quadratic_tilt_minimizer() {
        let m: FunctionModel<f64> = builtin("quadratic(I)").unwrap();
        let obj = BallObjective::full(&m, vec![0.0, 0.0], vec![0.1, 0.2]);
        let r = minimize_in_ball(&obj, 1.0, &SolverConfig::default());
        let (y, _) = r.selection(1e-9);
        assert!((y[0] - 0.1).abs() < 1e-12 && (y[1] - 0.2).abs() < 1e-12);
        assert_eq!(r.minimizers(1e-9, 1e-6).len(), 1);
    }

    #[test]
    fn crossing_kink_is_polished() {
        let m: FunctionModel<f64> = builtin("crossing_max").unwrap();
        let u = 0.1;
        let obj = BallObjective {
            model: &m,
            origin: vec![u, crossing_base_point()],
            map: Matrix::from_columns(2, &[vec![0.0, 1.0]]),
            tilt: vec![0.0, 0.0],
            prox: None,
        };
        let r = minimize_in_ball(&obj, 1.0, &SolverConfig::default());
        let (y, _) = r.selection(1e-9);
        let exact = (5f64.sqrt() - (5.0 - 4.0 * u * u).sqrt()) / 2.0;
        assert!((y[0] - exact).abs() < 1e-13, "{} vs {}", y[0], exact);
        assert!(r.best().polished);
    }

    #[test]
    fn flat_argmin_reports_several_points() {
        let m: FunctionModel<f64> = builtin("abs_diff").unwrap();
        let obj = BallObjective::full(&m, vec![0.0, 0.0], vec![0.0, 0.0]);
        let r = minimize_in_ball(&obj, 1.0, &SolverConfig::default());
        assert!(r.minimizers(1e-9, 1e-6).len() > 1);
    }

    #[test]
    fn plain_function_minimum() {
        let (x, v) = minimize_function(|x: &[f64]| (x[0] - 0.3).powi(2) + 1.0, &[0.0], 1.0, &SolverConfig::default());
        assert!((x[0] - 0.3).abs() < 1e-7);
        assert!((v - 1.0).abs() < 1e-13);
    }
}
