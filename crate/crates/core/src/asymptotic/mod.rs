//! Empirical order certification: bracket expansions of variations,
//! product-of-exponentials formulas and mollified systems.

pub mod expansion;
pub mod fit;
pub mod product;
pub mod smoothing;

pub use expansion::{
    verify_expansion, verify_goh_expansion, verify_lc2_expansion, verify_lc3_expansion, ExpansionConfig, ExpansionReport,
};
pub use fit::{fit_power, PowerFit};
pub use product::{coefficient_identities, product_expansion_residual, variation_profile_builder, ProductReport};
pub use smoothing::{mainprop_nonsmooth_check, mollification_consistency, MainpropConfig, MainpropReport};
