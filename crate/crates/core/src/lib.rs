//! Statistical toolkit for isotropic random fields on the sphere.

pub mod bispectrum;
pub mod curvature;
pub mod error;
pub mod field;
pub mod grid;
pub mod harmonic;
pub mod io;
pub mod mc;
pub mod needlets;
pub mod smhw;
pub mod spectra;
pub mod stats;

pub use error::{Error, Result};
pub use grid::{
    analyze, analyze_observed, apply_mask, build_grid, integrate, synthesize, Alm, Mask,
    SphereGrid, SphereMap,
};
