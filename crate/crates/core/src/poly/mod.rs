//! Polynomial profiles and iterated-integral coefficient functionals.

pub mod coeffs;
pub mod family;
pub mod rational;
pub mod real;

pub use coeffs::CoefficientTable;
pub use family::{build_goh_family, project_to_psharp, GohPolyFamily, DEFAULT_DEGREE_CAP};
pub use rational::{area, tilde_p, RatPoly};
pub use real::ScaledPoly;
