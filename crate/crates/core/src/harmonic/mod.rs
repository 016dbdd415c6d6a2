//! Special functions on the sphere: Legendre functions, spherical harmonics
//! and their derivatives, Wigner rotation matrices, 3j symbols and Gaunt
//! integrals.

mod factorial;
pub mod legendre;
pub mod threej;
pub mod wigner;

pub use factorial::ln_factorial;
pub use legendre::{
    assoc_legendre, legendre_p, lm_index, normalized_legendre, triangular_len, ylm,
    ylm_derivatives, LegendreTable, YlmDerivatives, MAX_DEGREE, POLAR_CUTOFF,
};
pub use threej::{
    gaunt, selection_rules, triangle, wigner_3j, wigner_3j_exact, wigner_3j_float, ThreeJTable,
};
pub use wigner::{
    wigner_D, wigner_d, wigner_d_all, wigner_d_explicit, SmallD, WignerDBlock, WIGNER_D_MAX_DEGREE,
};
