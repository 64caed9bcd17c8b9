//! Density calculus for quantitative central limit theorem experiments:
//! grid densities and their entropy/distance functionals, characteristic
//! functions with derivatives, quantile density decompositions, block
//! repacking, median-split convolution decompositions, and evaluators
//! pairing each measured quantity with its theoretical envelope.

pub mod bounds;
pub mod cli;
pub mod decomposition;
pub mod density;
pub mod error;
pub mod family;
pub mod fftconv;
pub mod functionals;
pub mod interp;
pub mod lab;
pub mod special;
pub mod spectral;

pub use density::{GridConfig, GridDensity, MomentSummary};
pub use error::{Error, Result};
pub use family::{materialize, materialize_scaled, Family, FamilySpec};
