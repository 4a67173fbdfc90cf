//! B-spline and NURBS bases, bivariate patches and Gauss quadrature.

pub mod knots;
pub mod patch;
pub mod quadrature;

pub use knots::KnotVector;
pub use patch::{BasisEval, GeometryEval, NurbsPatch, TensorBasis};
pub use quadrature::GaussRule;
