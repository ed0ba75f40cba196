pub mod error;
pub mod geometry;
pub mod ode;
pub mod poly;
pub mod system;
pub mod variation;
pub mod asymptotic;
pub mod conditions;
