//! Numerical laboratory for the VU-decomposition of prox-regular nonsmooth
//! functions.
//!
//! The crate computes subdifferential polytopes and VU frames, tilt maps,
//! localized U-Lagrangians, rank-one supports of limiting subhessians,
//! Moreau envelopes, convex envelopes and conjugates on grids, and traces
//! of the manifold `{(u, v(u))}`. Every routine is generic over the scalar
//! type; the `f64` aliases below are what the CLI and tests use.

pub mod envelope;
pub mod error;
pub mod hull;
pub mod jet2;
pub mod lattice;
pub mod linalg;
pub mod lp;
pub mod manifold;
pub mod oracle;
pub mod scalar;
pub mod search;
pub mod tilt;
pub mod ulag;
pub mod vu;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = linalg::Matrix<f64>;
pub type Model = oracle::FunctionModel<f64>;
pub type Polytope = vu::SubdifferentialPolytope<f64>;
pub type Frame = vu::VuFrame<f64>;
pub type Grid = envelope::GridFunction<f64>;
pub type LagrangianContext = ulag::ULagContext<f64>;
pub type Trace = manifold::ManifoldTrace<f64>;
pub type Profile = jet2::RankOneProfile<f64>;
pub type Bundle = jet2::HessianBundle<f64>;
pub type SolverConfig = search::SolverConfig<f64>;
