//! Self-dual variational solvers for `0 ∈ ∂φ(x) + Bx + Λx + f`: minimize a
//! functional whose infimum is zero and read the value as a certificate.

pub mod convex;
pub mod error;
pub mod evolution;
pub mod lagrangian;
pub mod operators;
pub mod optim;
pub mod problems;
pub mod space;
pub mod stationary;
pub mod stencil;

pub use convex::{ConjugatePoint, ConvexFunction, Subgradient};
pub use error::{Error, Result};
pub use evolution::{DiscretePath, LambdaFlowReport, PathOptions, PathProblem, PathReport};
pub use lagrangian::{AsdReport, BoundaryLagrangian, Lagrangian, RegPreset};
pub use operators::{BoundaryPair, ConservativeMap, ConservativeOp, LinearMap, VjpMode};
pub use space::{seeded_rng, Element, Space};
pub use stationary::{Defects, MinimizeOptions, PicardOptions, SolveReport, SolveStatus, StationaryProblem};
