//! Structured oracles for nonsmooth functions and the builtin test corpus.
//!
//! A [`FunctionModel`] is either a pointwise maximum of smooth pieces, a sum
//! of smooth pieces plus a polyhedral max term, or a custom value oracle
//! with explicitly declared capabilities. Structured kinds expose their
//! pieces so that subdifferentials, active sets and Newton polishing work
//! from exact first- and second-order data.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, sym_eigen, Matrix};
use crate::scalar::Scalar;
use crate::vu::SubdifferentialPolytope;

pub type ValueFn<S> = Arc<dyn Fn(&[S]) -> S + Send + Sync>;
pub type GradientFn<S> = Arc<dyn Fn(&[S]) -> Vec<S> + Send + Sync>;
pub type HessianFn<S> = Arc<dyn Fn(&[S]) -> Matrix<S> + Send + Sync>;
/// Returns the generators of `co ∂f(x)` given the point and an activity tolerance.
pub type GeneratorFn<S> = Arc<dyn Fn(&[S], S) -> Vec<Vec<S>> + Send + Sync>;

/// Default relative activity tolerance.
pub const DEFAULT_ACTIVE_TOL: f64 = 1e-9;

/// One smooth piece of a structured model.
#[derive(Clone)]
pub enum SmoothPiece<S> {
    /// `⟨a, x⟩ + b`
    Affine { a: Vec<S>, b: S },
    /// `½ xᵀAx + ⟨b, x⟩ + c`
    Quadratic { a: Matrix<S>, b: Vec<S>, c: S },
    /// Arbitrary smooth oracle; the Hessian is optional.
    Oracle { value: ValueFn<S>, gradient: GradientFn<S>, hessian: Option<HessianFn<S>> },
}

impl<S: Scalar> SmoothPiece<S> {
    pub fn value(&self, x: &[S]) -> S {
        match self {
            SmoothPiece::Affine { a, b } => dot(a, x) + *b,
            SmoothPiece::Quadratic { a, b, c } => S::lit(0.5) * a.quad_form(x) + dot(b, x) + *c,
            SmoothPiece::Oracle { value, .. } => value(x),
        }
    }

    pub fn gradient(&self, x: &[S]) -> Vec<S> {
        match self {
            SmoothPiece::Affine { a, .. } => a.clone(),
            SmoothPiece::Quadratic { a, b, .. } => {
                a.mul_vec(x).iter().zip(b).map(|(&p, &q)| p + q).collect()
            }
            SmoothPiece::Oracle { gradient, .. } => gradient(x),
        }
    }

    pub fn hessian(&self, x: &[S]) -> Option<Matrix<S>> {
        match self {
            SmoothPiece::Affine { a, .. } => Some(Matrix::zeros(a.len(), a.len())),
            SmoothPiece::Quadratic { a, .. } => Some(a.clone()),
            SmoothPiece::Oracle { hessian, .. } => hessian.as_ref().map(|h| h(x)),
        }
    }
}

impl<S: Scalar> fmt::Debug for SmoothPiece<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SmoothPiece::Affine { a, b } => write!(f, "Affine({a:?}, {b})"),
            SmoothPiece::Quadratic { a, b, c } => write!(f, "Quadratic({a:?}, {b:?}, {c})"),
            SmoothPiece::Oracle { hessian, .. } => {
                write!(f, "Oracle(hessian: {})", hessian.is_some())
            }
        }
    }
}

/// First- and second-order data of one effective piece at a point.
#[derive(Debug, Clone)]
pub struct PieceJet<S> {
    pub value: S,
    pub gradient: Vec<S>,
    pub hessian: Option<Matrix<S>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    MaxOfSmooth,
    SumOfSmoothAndPolyhedral,
    Custom,
}

/// `q(x) = α − (R/2)‖x − x̄‖² ≤ f(x)` globally.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticMinorant<S> {
    pub alpha: S,
    pub r: S,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flags<S> {
    pub locally_lipschitz: bool,
    pub convex: bool,
    pub quadratic_minorant: Option<QuadraticMinorant<S>>,
}

impl<S: Scalar> Default for Flags<S> {
    fn default() -> Self {
        Flags { locally_lipschitz: true, convex: false, quadratic_minorant: None }
    }
}

/// Capabilities of a custom model. Only `value` is mandatory.
#[derive(Clone)]
pub struct CustomOracle<S> {
    pub value: ValueFn<S>,
    pub generators: Option<GeneratorFn<S>>,
    pub gradient: Option<GradientFn<S>>,
}

/// Pieces whose value is within `tolerance·(1+|f(x)|)` of the maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSet<S> {
    pub indices: Vec<usize>,
    pub tolerance: S,
}

/// A nonsmooth function given by structured oracles.
#[derive(Clone)]
pub struct FunctionModel<S> {
    name: String,
    dim: usize,
    kind: ModelKind,
    pieces: Vec<SmoothPiece<S>>,
    polyhedral: Vec<(Vec<S>, S)>,
    custom: Option<CustomOracle<S>>,
    flags: Flags<S>,
    base_point: Vec<S>,
    known_polytopes: Vec<(Vec<S>, Vec<Vec<S>>)>,
    known_u: Option<Matrix<S>>,
    notes: Vec<String>,
}

impl<S: Scalar> fmt::Debug for FunctionModel<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FunctionModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("kind", &self.kind)
            .field("pieces", &self.pieces)
            .field("polyhedral", &self.polyhedral)
            .field("flags", &self.flags)
            .finish()
    }
}

impl<S: Scalar> FunctionModel<S> {
    /// `f = max_i pieces[i]`.
    pub fn max_of_smooth(name: impl Into<String>, dim: usize, pieces: Vec<SmoothPiece<S>>, flags: Flags<S>) -> Self {
        assert!(!pieces.is_empty(), "max of no pieces");
        Self::structured(name, dim, ModelKind::MaxOfSmooth, pieces, Vec::new(), flags)
    }

    /// `f = Σ smooth[i] + max_j (⟨a_j, x⟩ + b_j)`; an empty polyhedral list
    /// means no polyhedral term.
    pub fn sum_of_smooth_and_polyhedral(
        name: impl Into<String>,
        dim: usize,
        smooth: Vec<SmoothPiece<S>>,
        polyhedral: Vec<(Vec<S>, S)>,
        flags: Flags<S>,
    ) -> Self {
        Self::structured(name, dim, ModelKind::SumOfSmoothAndPolyhedral, smooth, polyhedral, flags)
    }

    fn structured(
        name: impl Into<String>,
        dim: usize,
        kind: ModelKind,
        pieces: Vec<SmoothPiece<S>>,
        polyhedral: Vec<(Vec<S>, S)>,
        flags: Flags<S>,
    ) -> Self {
        FunctionModel {
            name: name.into(),
            dim,
            kind,
            pieces,
            polyhedral,
            custom: None,
            flags,
            base_point: vec![S::zero(); dim],
            known_polytopes: Vec::new(),
            known_u: None,
            notes: Vec::new(),
        }
    }

    /// Custom model from a value oracle; further capabilities via
    /// [`with_generators`](Self::with_generators) and
    /// [`with_gradient`](Self::with_gradient).
    pub fn custom(name: impl Into<String>, dim: usize, value: ValueFn<S>, flags: Flags<S>) -> Self {
        FunctionModel {
            name: name.into(),
            dim,
            kind: ModelKind::Custom,
            pieces: Vec::new(),
            polyhedral: Vec::new(),
            custom: Some(CustomOracle { value, generators: None, gradient: None }),
            flags,
            base_point: vec![S::zero(); dim],
            known_polytopes: Vec::new(),
            known_u: None,
            notes: Vec::new(),
        }
    }

    pub fn with_generators(mut self, generators: GeneratorFn<S>) -> Self {
        if let Some(c) = self.custom.as_mut() {
            c.generators = Some(generators);
        }
        self
    }

    pub fn with_gradient(mut self, gradient: GradientFn<S>) -> Self {
        if let Some(c) = self.custom.as_mut() {
            c.gradient = Some(gradient);
        }
        self
    }

    pub fn with_base_point(mut self, x: Vec<S>) -> Self {
        assert_eq!(x.len(), self.dim);
        self.base_point = x;
        self
    }

    /// Registers a closed-form generator set of `co ∂f(point)`.
    pub fn with_known_polytope(mut self, point: Vec<S>, generators: Vec<Vec<S>>) -> Self {
        self.known_polytopes.push((point, generators));
        self
    }

    pub fn with_known_u(mut self, u: Matrix<S>) -> Self {
        self.known_u = Some(u);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn flags(&self) -> &Flags<S> {
        &self.flags
    }

    pub fn pieces(&self) -> &[SmoothPiece<S>] {
        &self.pieces
    }

    pub fn polyhedral(&self) -> &[(Vec<S>, S)] {
        &self.polyhedral
    }

    pub fn base_point(&self) -> &[S] {
        &self.base_point
    }

    /// Closed-form `U` subspace at the base point, when the builtin knows it.
    pub fn known_u(&self) -> Option<&Matrix<S>> {
        self.known_u.as_ref()
    }

    /// Provenance notes attached to the model (e.g. base-point corrections).
    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    pub fn is_structured(&self) -> bool {
        self.kind != ModelKind::Custom
    }

    /// Evaluates `f(x)`; NaN input is rejected.
    pub fn eval(&self, x: &[S]) -> Result<S> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        if x.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidPoint(format!("NaN coordinate in {:?}", x)));
        }
        Ok(self.value(x))
    }

    /// Unchecked evaluation for inner loops.
    pub fn value(&self, x: &[S]) -> S {
        match self.kind {
            ModelKind::MaxOfSmooth => {
                let mut best = S::neg_infinity();
                for p in &self.pieces {
                    best = best.max(p.value(x));
                }
                for (a, b) in &self.polyhedral {
                    best = best.max(dot(a, x) + *b);
                }
                best
            }
            ModelKind::SumOfSmoothAndPolyhedral => {
                let smooth: S = self.pieces.iter().map(|p| p.value(x)).sum();
                if self.polyhedral.is_empty() {
                    smooth
                } else {
                    let poly = self
                        .polyhedral
                        .iter()
                        .map(|(a, b)| dot(a, x) + *b)
                        .fold(S::neg_infinity(), S::max);
                    smooth + poly
                }
            }
            ModelKind::Custom => (self.custom.as_ref().expect("custom oracle").value)(x),
        }
    }

    /// Number of effective max-pieces (0 for custom models).
    pub fn effective_piece_count(&self) -> usize {
        match self.kind {
            ModelKind::MaxOfSmooth => self.pieces.len() + self.polyhedral.len(),
            ModelKind::SumOfSmoothAndPolyhedral => self.polyhedral.len().max(1),
            ModelKind::Custom => 0,
        }
    }

    /// Values of the effective pieces, whose pointwise max is `f`.
    pub fn piece_values(&self, x: &[S]) -> Option<Vec<S>> {
        match self.kind {
            ModelKind::MaxOfSmooth => {
                let mut v: Vec<S> = self.pieces.iter().map(|p| p.value(x)).collect();
                v.extend(self.polyhedral.iter().map(|(a, b)| dot(a, x) + *b));
                Some(v)
            }
            ModelKind::SumOfSmoothAndPolyhedral => {
                let smooth: S = self.pieces.iter().map(|p| p.value(x)).sum();
                if self.polyhedral.is_empty() {
                    Some(vec![smooth])
                } else {
                    Some(self.polyhedral.iter().map(|(a, b)| smooth + dot(a, x) + *b).collect())
                }
            }
            ModelKind::Custom => None,
        }
    }

    /// Values, gradients and (when available) Hessians of the effective pieces.
    pub fn piece_jets(&self, x: &[S]) -> Option<Vec<PieceJet<S>>> {
        match self.kind {
            ModelKind::MaxOfSmooth => {
                let mut out: Vec<PieceJet<S>> = self
                    .pieces
                    .iter()
                    .map(|p| PieceJet { value: p.value(x), gradient: p.gradient(x), hessian: p.hessian(x) })
                    .collect();
                out.extend(self.polyhedral.iter().map(|(a, b)| PieceJet {
                    value: dot(a, x) + *b,
                    gradient: a.clone(),
                    hessian: Some(Matrix::zeros(self.dim, self.dim)),
                }));
                Some(out)
            }
            ModelKind::SumOfSmoothAndPolyhedral => {
                let n = self.dim;
                let mut value = S::zero();
                let mut grad = vec![S::zero(); n];
                let mut hess = Some(Matrix::zeros(n, n));
                for p in &self.pieces {
                    value = value + p.value(x);
                    for (g, d) in grad.iter_mut().zip(p.gradient(x)) {
                        *g = *g + d;
                    }
                    hess = match (hess, p.hessian(x)) {
                        (Some(h), Some(ph)) => Some(h.add(&ph)),
                        _ => None,
                    };
                }
                if self.polyhedral.is_empty() {
                    return Some(vec![PieceJet { value, gradient: grad, hessian: hess }]);
                }
                Some(
                    self.polyhedral
                        .iter()
                        .map(|(a, b)| PieceJet {
                            value: value + dot(a, x) + *b,
                            gradient: grad.iter().zip(a).map(|(&g, &ai)| g + ai).collect(),
                            hessian: hess.clone(),
                        })
                        .collect(),
                )
            }
            ModelKind::Custom => None,
        }
    }

    /// Indices of pieces active at `x` within the relative tolerance `tau`.
    pub fn active_set(&self, x: &[S], tau: S) -> Result<ActiveSet<S>> {
        let values = self.piece_values(x).ok_or_else(|| self.missing("active set (structured pieces)"))?;
        let f = values.iter().copied().fold(S::neg_infinity(), S::max);
        let slack = tau * (S::one() + f.abs());
        let indices = values
            .iter()
            .enumerate()
            .filter(|(_, &v)| f - v <= slack)
            .map(|(i, _)| i)
            .collect();
        Ok(ActiveSet { indices, tolerance: tau })
    }

    /// Generators of `co ∂f(x)`.
    ///
    /// Closed-form generator sets registered on the model take precedence at
    /// their points; otherwise the gradients of the active pieces are used.
    pub fn subdifferential_polytope(&self, x: &[S], tau: S) -> Result<SubdifferentialPolytope<S>> {
        for (p, gens) in &self.known_polytopes {
            let same = p.iter().zip(x).all(|(&a, &b)| (a - b).abs() <= S::lit(1e-14) * (S::one() + a.abs()));
            if same {
                return Ok(SubdifferentialPolytope::new(x.to_vec(), gens.clone(), true));
            }
        }
        match self.kind {
            ModelKind::Custom => {
                let custom = self.custom.as_ref().expect("custom oracle");
                if let Some(g) = &custom.generators {
                    Ok(SubdifferentialPolytope::new(x.to_vec(), g(x, tau), true))
                } else if let Some(grad) = &custom.gradient {
                    Ok(SubdifferentialPolytope::new(x.to_vec(), vec![grad(x)], true))
                } else {
                    Err(self.missing("subgradient oracle"))
                }
            }
            _ => {
                let active = self.active_set(x, tau)?;
                let jets = self.piece_jets(x).expect("structured");
                let gens = active.indices.iter().map(|&i| jets[i].gradient.clone()).collect();
                Ok(SubdifferentialPolytope::new(x.to_vec(), gens, true))
            }
        }
    }

    /// Gradient at `x` when `f` is differentiable there in the structured
    /// sense (single active piece, or a custom gradient oracle).
    pub fn gradient(&self, x: &[S], tau: S) -> Option<Vec<S>> {
        match self.kind {
            ModelKind::Custom => {
                let c = self.custom.as_ref()?;
                if let Some(g) = &c.gradient {
                    return Some(g(x));
                }
                let gens = c.generators.as_ref()?(x, tau);
                if gens.len() == 1 {
                    gens.into_iter().next()
                } else {
                    None
                }
            }
            _ => {
                let active = self.active_set(x, tau).ok()?;
                if active.indices.len() == 1 {
                    let jets = self.piece_jets(x)?;
                    Some(jets[active.indices[0]].gradient.clone())
                } else {
                    None
                }
            }
        }
    }

    /// Whether a gradient oracle exists everywhere (custom smooth models).
    pub fn has_gradient_oracle(&self) -> bool {
        self.custom.as_ref().map_or(false, |c| c.gradient.is_some())
    }

    /// Analytic Hessian of the unique active piece, if any.
    pub fn piece_hessian(&self, x: &[S], tau: S) -> Option<Matrix<S>> {
        let active = self.active_set(x, tau).ok()?;
        if active.indices.len() != 1 {
            return None;
        }
        self.piece_jets(x)?[active.indices[0]].hessian.clone()
    }

    /// `∂^∞f(x)`: `{0}` for locally Lipschitz models, otherwise unsupported.
    pub fn singular_subdifferential(&self, _x: &[S]) -> Result<Vec<Vec<S>>> {
        if self.flags.locally_lipschitz {
            Ok(vec![vec![S::zero(); self.dim]])
        } else {
            Err(self.missing("singular subdifferential for non-Lipschitz models"))
        }
    }

    fn missing(&self, capability: &str) -> Error {
        Error::CapabilityMissing { model: self.name.clone(), capability: capability.to_string() }
    }
}

/// Base point of the crossing example: both pieces meet where `(v−1)² = v`.
pub fn crossing_base_point() -> f64 {
    (3.0 - 5f64.sqrt()) / 2.0
}

/// Note embedded in every report on the crossing example.
pub const CROSSING_BASE_POINT_NOTE: &str = "crossing_max: both pieces are active only at \
x̄=(0,(3−√5)/2), where v(u)=(√5−√(5−4u²))/2; the commonly quoted base point w̄=0 with \
v(u)=3/2−√(9−4u²)/2 does not make both pieces active. The corrected base point is used.";

/// Builds a builtin model by name.
///
/// Names: `abs_diff`, `four_quadrant_max`, `crossing_max`, `abs_plus_quad`,
/// `huber_source_abs`, and `quadratic(M)` where `M` is `I`, `In` (identity of
/// size n), `-In`, `diag(a,b,…)` or a JSON row list such as `[[1,0],[0,2]]`.
/// Quadratic builtins are `½ xᵀMx`.
pub fn builtin<S: Scalar>(name: &str) -> Result<FunctionModel<S>> {
    let s = |x: f64| S::lit(x);
    let lipschitz_convex = Flags {
        locally_lipschitz: true,
        convex: true,
        quadratic_minorant: Some(QuadraticMinorant { alpha: S::zero(), r: S::zero() }),
    };
    let trimmed = name.trim();
    match trimmed {
        "abs_diff" => {
            let pieces = vec![
                SmoothPiece::Affine { a: vec![s(1.0), s(-1.0)], b: S::zero() },
                SmoothPiece::Affine { a: vec![s(-1.0), s(1.0)], b: S::zero() },
            ];
            let r = s(std::f64::consts::FRAC_1_SQRT_2);
            Ok(FunctionModel::max_of_smooth("abs_diff", 2, pieces, lipschitz_convex)
                .with_known_polytope(vec![S::zero(); 2], vec![vec![s(1.0), s(-1.0)], vec![s(-1.0), s(1.0)]])
                .with_known_u(Matrix::from_columns(2, &[vec![r, r]])))
        }
        "abs_plus_quad" => {
            let quad = SmoothPiece::Quadratic { a: Matrix::identity(2).scale(s(2.0)), b: vec![S::zero(); 2], c: S::zero() };
            let poly = vec![(vec![s(1.0), s(-1.0)], S::zero()), (vec![s(-1.0), s(1.0)], S::zero())];
            let r = s(std::f64::consts::FRAC_1_SQRT_2);
            Ok(FunctionModel::sum_of_smooth_and_polyhedral("abs_plus_quad", 2, vec![quad], poly, lipschitz_convex)
                .with_known_polytope(vec![S::zero(); 2], vec![vec![s(1.0), s(-1.0)], vec![s(-1.0), s(1.0)]])
                .with_known_u(Matrix::from_columns(2, &[vec![r, r]])))
        }
        "crossing_max" => {
            let f1 = SmoothPiece::Quadratic {
                a: Matrix::identity(2).scale(s(2.0)),
                b: vec![S::zero(), s(-2.0)],
                c: S::one(),
            };
            let f2 = SmoothPiece::Affine { a: vec![S::zero(), S::one()], b: S::zero() };
            let base = vec![S::zero(), s(crossing_base_point())];
            let gens = vec![vec![S::zero(), s(1.0 - 5f64.sqrt())], vec![S::zero(), S::one()]];
            Ok(FunctionModel::max_of_smooth("crossing_max", 2, vec![f1, f2], lipschitz_convex)
                .with_base_point(base.clone())
                .with_known_polytope(base, gens)
                .with_known_u(Matrix::from_columns(2, &[vec![S::one(), S::zero()]]))
                .with_note(CROSSING_BASE_POINT_NOTE))
        }
        "four_quadrant_max" => Ok(four_quadrant_max()),
        "huber_source_abs" => {
            let pieces = vec![
                SmoothPiece::Affine { a: vec![S::one()], b: S::zero() },
                SmoothPiece::Affine { a: vec![-S::one()], b: S::zero() },
            ];
            Ok(FunctionModel::max_of_smooth("huber_source_abs", 1, pieces, lipschitz_convex)
                .with_known_polytope(vec![S::zero()], vec![vec![S::one()], vec![-S::one()]])
                .with_known_u(Matrix::zeros(1, 0)))
        }
        _ => {
            if let Some(inner) = trimmed.strip_prefix("quadratic(").and_then(|r| r.strip_suffix(')')) {
                let a = parse_matrix::<S>(inner).ok_or_else(|| Error::UnknownBuiltin(name.to_string()))?;
                Ok(quadratic_model(trimmed, a))
            } else {
                Err(Error::UnknownBuiltin(name.to_string()))
            }
        }
    }
}

/// `½ xᵀAx` with flags derived from the spectrum of `A`.
pub fn quadratic_model<S: Scalar>(name: &str, a: Matrix<S>) -> FunctionModel<S> {
    let n = a.rows();
    let (eig, _) = sym_eigen(&a);
    let lowest = eig.first().copied().unwrap_or(S::zero());
    let tol = S::lit(1e-12) * (S::one() + a.max_abs());
    let flags = Flags {
        locally_lipschitz: true,
        convex: lowest >= -tol,
        quadratic_minorant: Some(QuadraticMinorant { alpha: S::zero(), r: (-lowest).max(S::zero()) }),
    };
    let piece = SmoothPiece::Quadratic { a, b: vec![S::zero(); n], c: S::zero() };
    FunctionModel::max_of_smooth(name, n, vec![piece], flags).with_known_u(Matrix::identity(n))
}

fn parse_matrix<S: Scalar>(spec: &str) -> Option<Matrix<S>> {
    let spec = spec.trim();
    let (negate, body) = match spec.strip_prefix('-') {
        Some(rest) => (true, rest.trim()),
        None => (false, spec),
    };
    let m = if body == "I" {
        Some(Matrix::identity(2))
    } else if let Some(n) = body.strip_prefix('I') {
        n.parse::<usize>().ok().filter(|&n| n > 0).map(Matrix::identity)
    } else if let Some(list) = body.strip_prefix("diag(").and_then(|r| r.strip_suffix(')')) {
        let d: Option<Vec<S>> = list.split(',').map(|t| t.trim().parse::<f64>().ok().map(S::lit)).collect();
        d.filter(|d| !d.is_empty()).map(|d| Matrix::diagonal(&d))
    } else if body.starts_with('[') {
        let rows: Vec<Vec<f64>> = serde_json::from_str(body).ok()?;
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return None;
        }
        Some(Matrix::from_rows_f64(&rows))
    } else {
        None
    }?;
    Some(if negate { m.scale(-S::one()) } else { m })
}

/// `f(x,y) = max{0, |y| − |x|}`: on each closed quadrant this is the
/// piecewise table `max{0, ±x ± y}` of the degenerate example.
fn four_quadrant_max<S: Scalar>() -> FunctionModel<S> {
    let value: ValueFn<S> = Arc::new(|x: &[S]| (x[1].abs() - x[0].abs()).max(S::zero()));
    let generators: GeneratorFn<S> = Arc::new(|x: &[S], tau: S| {
        let g = x[1].abs() - x[0].abs();
        let f = g.max(S::zero());
        let slack = tau * (S::one() + f.abs());
        let signs = |t: S| -> Vec<S> {
            if t.abs() <= slack {
                vec![S::one(), -S::one()]
            } else {
                vec![t.signum()]
            }
        };
        let mut out = Vec::new();
        if f <= slack {
            out.push(vec![S::zero(), S::zero()]);
        }
        if g >= f - slack {
            for sx in signs(x[0]) {
                for sy in signs(x[1]) {
                    out.push(vec![-sx, sy]);
                }
            }
        }
        out
    });
    let flags = Flags {
        locally_lipschitz: true,
        convex: false,
        quadratic_minorant: Some(QuadraticMinorant { alpha: S::zero(), r: S::zero() }),
    };
    FunctionModel::custom("four_quadrant_max", 2, value, flags)
        .with_generators(generators)
        .with_known_u(Matrix::zeros(2, 0))
}

/// Serialized problem description for custom structured models.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub dim: usize,
    pub kind: ModelKind,
    pub pieces: Vec<PieceSpec>,
    #[serde(default)]
    pub polyhedral: Vec<AffineSpec>,
    #[serde(default)]
    pub flags: FlagsSpec,
    #[serde(default)]
    pub base_point: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PieceSpec {
    Quadratic {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        #[serde(default)]
        b: Option<Vec<f64>>,
        #[serde(default)]
        c: f64,
    },
    Affine { a: Vec<f64>, #[serde(default)] b: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AffineSpec {
    pub a: Vec<f64>,
    #[serde(default)]
    pub b: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlagsSpec {
    #[serde(default = "default_true")]
    pub locally_lipschitz: bool,
    #[serde(default)]
    pub convex: bool,
    #[serde(default)]
    pub quadratic_minorant: Option<MinorantSpec>,
}

impl Default for FlagsSpec {
    fn default() -> Self {
        FlagsSpec { locally_lipschitz: true, convex: false, quadratic_minorant: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinorantSpec {
    pub alpha: f64,
    #[serde(rename = "R")]
    pub r: f64,
}

fn default_true() -> bool {
    true
}

impl ProblemSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Problem(e.to_string()))
    }

    /// Validates dimensions and builds the model.
    pub fn build<S: Scalar>(&self) -> Result<FunctionModel<S>> {
        let n = self.dim;
        if n == 0 {
            return Err(Error::Problem("dim must be at least 1".into()));
        }
        if self.kind == ModelKind::Custom {
            return Err(Error::Problem("custom kind cannot be loaded from a problem file".into()));
        }
        let check = |len: usize, what: &str| -> Result<()> {
            if len == n {
                Ok(())
            } else {
                Err(Error::Problem(format!("{what}: expected length {n}, got {len}")))
            }
        };
        let mut pieces = Vec::new();
        for (i, p) in self.pieces.iter().enumerate() {
            match p {
                PieceSpec::Quadratic { a, b, c } => {
                    check(a.len(), &format!("pieces[{i}].A rows"))?;
                    for row in a {
                        check(row.len(), &format!("pieces[{i}].A columns"))?;
                    }
                    let b = b.clone().unwrap_or_else(|| vec![0.0; n]);
                    check(b.len(), &format!("pieces[{i}].b"))?;
                    pieces.push(SmoothPiece::Quadratic {
                        a: Matrix::from_rows_f64(a).symmetrized(),
                        b: b.iter().map(|&x| S::lit(x)).collect(),
                        c: S::lit(*c),
                    });
                }
                PieceSpec::Affine { a, b } => {
                    check(a.len(), &format!("pieces[{i}].a"))?;
                    pieces.push(SmoothPiece::Affine { a: a.iter().map(|&x| S::lit(x)).collect(), b: S::lit(*b) });
                }
            }
        }
        let mut poly = Vec::new();
        for (i, a) in self.polyhedral.iter().enumerate() {
            check(a.a.len(), &format!("polyhedral[{i}].a"))?;
            poly.push((a.a.iter().map(|&x| S::lit(x)).collect(), S::lit(a.b)));
        }
        let flags = Flags {
            locally_lipschitz: self.flags.locally_lipschitz,
            convex: self.flags.convex,
            quadratic_minorant: self
                .flags
                .quadratic_minorant
                .as_ref()
                .map(|m| QuadraticMinorant { alpha: S::lit(m.alpha), r: S::lit(m.r) }),
        };
        let name = self.name.clone().unwrap_or_else(|| "problem".to_string());
        let model = match self.kind {
            ModelKind::MaxOfSmooth => {
                if pieces.is_empty() && poly.is_empty() {
                    return Err(Error::Problem("max_of_smooth needs at least one piece".into()));
                }
                FunctionModel::structured(name, n, ModelKind::MaxOfSmooth, pieces, poly, flags)
            }
            ModelKind::SumOfSmoothAndPolyhedral => {
                FunctionModel::sum_of_smooth_and_polyhedral(name, n, pieces, poly, flags)
            }
            ModelKind::Custom => unreachable!(),
        };
        match &self.base_point {
            Some(bp) => {
                check(bp.len(), "base_point")?;
                Ok(model.with_base_point(bp.iter().map(|&x| S::lit(x)).collect()))
            }
            None => Ok(model),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(name: &str) -> FunctionModel<f64> {
        builtin(name).unwrap()
    }

    #[test]
    fn eval_examples() {
        assert_eq!(m("abs_diff").eval(&[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(m("abs_diff").eval(&[0.7, 0.7]).unwrap(), 0.0);
        assert_eq!(m("crossing_max").eval(&[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(m("abs_plus_quad").eval(&[1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(m("quadratic(I2)").eval(&[3.0, 4.0]).unwrap(), 12.5);
        assert_eq!(m("four_quadrant_max").eval(&[1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn nan_input_is_rejected() {
        let err = m("abs_diff").eval(&[f64::NAN, 0.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidPoint(_)));
    }

    #[test]
    fn unknown_builtin() {
        assert!(matches!(builtin::<f64>("nope"), Err(Error::UnknownBuiltin(_))));
        assert!(matches!(builtin::<f64>("quadratic(foo)"), Err(Error::UnknownBuiltin(_))));
    }

    #[test]
    fn active_sets() {
        let c = m("crossing_max");
        assert_eq!(c.active_set(&[0.0, 0.0], 1e-9).unwrap().indices, vec![0]);
        let v = crossing_base_point();
        assert_eq!(c.active_set(&[0.0, v], 1e-9).unwrap().indices, vec![0, 1]);
        assert_eq!(m("abs_diff").active_set(&[0.0, 0.0], 1e-9).unwrap().indices, vec![0, 1]);
    }

    #[test]
    fn polytopes() {
        let p = m("abs_diff").subdifferential_polytope(&[0.0, 0.0], 1e-9).unwrap();
        assert_eq!(p.generators(), &[vec![1.0, -1.0], vec![-1.0, 1.0]]);
        let q = m("four_quadrant_max").subdifferential_polytope(&[0.0, 0.0], 1e-9).unwrap();
        for g in [[0.0, 0.0], [1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]] {
            assert!(q.generators().iter().any(|h| h[0] == g[0] && h[1] == g[1]), "missing {g:?}");
        }
        let v = crossing_base_point();
        // computed from the pieces (perturb off the registered point)
        let c = m("crossing_max");
        let jets_point = [0.0, v];
        let active = c.active_set(&jets_point, 1e-9).unwrap();
        let jets = c.piece_jets(&jets_point).unwrap();
        let g0 = &jets[active.indices[0]].gradient;
        assert!((g0[1] - (1.0 - 5f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn custom_without_subgradients_fails_loudly() {
        let f = FunctionModel::<f64>::custom("plain", 1, Arc::new(|x: &[f64]| x[0].abs()), Flags::default());
        assert!(matches!(f.subdifferential_polytope(&[0.0], 1e-9), Err(Error::CapabilityMissing { .. })));
        let g = FunctionModel::<f64>::custom(
            "nonlip",
            1,
            Arc::new(|x: &[f64]| x[0].abs().sqrt()),
            Flags { locally_lipschitz: false, ..Flags::default() },
        );
        assert!(g.singular_subdifferential(&[0.0]).is_err());
        assert_eq!(m("abs_diff").singular_subdifferential(&[0.0, 0.0]).unwrap(), vec![vec![0.0, 0.0]]);
    }

    #[test]
    fn quadratic_flags() {
        let q = m("quadratic(diag(1,10))");
        assert!(q.flags().convex);
        let neg = m("quadratic(-I2)");
        assert!(!neg.flags().convex);
        assert_eq!(neg.flags().quadratic_minorant.unwrap().r, 1.0);
        let full = m("quadratic([[2,0],[0,5]])");
        assert_eq!(full.eval(&[1.0, 1.0]).unwrap(), 3.5);
    }

    #[test]
    fn problem_file_roundtrip() {
        let text = r#"{"dim":2,"kind":"max_of_smooth",
            "pieces":[{"type":"quadratic","A":[[2,0],[0,2]],"b":[0,-2],"c":1},{"type":"affine","a":[0,1]}],
            "flags":{"convex":true}}"#;
        let spec = ProblemSpec::from_json(text).unwrap();
        let model: FunctionModel<f64> = spec.build().unwrap();
        let reference = m("crossing_max");
        for p in [[0.0, 0.0], [0.3, -0.2], [1.0, 2.0]] {
            assert_eq!(model.eval(&p).unwrap(), reference.eval(&p).unwrap());
        }
        let bad = r#"{"dim":2,"kind":"max_of_smooth","pieces":[{"type":"affine","a":[1]}]}"#;
        assert!(ProblemSpec::from_json(bad).unwrap().build::<f64>().is_err());
    }
}
