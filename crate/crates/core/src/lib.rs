//! Multipatch isogeometric solver for the Westervelt equation with an adjoint-based shape
//! optimizer for acoustic lenses.
//!
//! Every numerical type is generic over [`Real`] (`f32` or `f64`); the aliases below fix
//! the scalar for the common cases.

pub mod adjoint;
pub mod assembly;
pub mod config;
pub mod domain;
pub mod error;
pub mod geometry;
pub mod gradient;
pub mod io;
pub mod linalg;
pub mod nurbs;
pub mod optimizer;
pub mod problem;
pub mod run;
pub mod scalar;
pub mod sparse;
pub mod state;
pub mod target;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use scalar::Real;

pub type Patch = nurbs::NurbsPatch<f64>;
pub type Domain = domain::MultiPatchDomain<f64>;
pub type System = assembly::AssembledSystem<f64>;
pub type Field = state::TimeSeriesField<f64>;
pub type Shape = geometry::LensShape<f64>;
pub type Problem = problem::LensProblem<f64>;

pub type Patch32 = nurbs::NurbsPatch<f32>;
pub type Domain32 = domain::MultiPatchDomain<f32>;
pub type System32 = assembly::AssembledSystem<f32>;
pub type Field32 = state::TimeSeriesField<f32>;
pub type Shape32 = geometry::LensShape<f32>;
pub type Problem32 = problem::LensProblem<f32>;
