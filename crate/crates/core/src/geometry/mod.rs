//! Vector fields, brackets, generalized Jacobians, hulls and mollifiers.

pub mod bracket;
pub mod field;
pub mod hull;
pub mod mollify;
pub mod sampling;

pub use bracket::{clarke_jacobian, set_valued_bracket, set_valued_bracket3, Bracket3Field, SetEstimate, SetValuedField};
pub use field::{PiecewiseField, Regularity};
pub use hull::Hull;
pub use mollify::{MollifiedField, Mollifier};
pub use sampling::SamplingConfig;
