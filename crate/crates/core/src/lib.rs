//! Numerical laboratory for Ricci flow on model geometries: flows, conjugate
//! heat kernels, entropy functionals, functional inequalities and
//! curvature regularity scales.

pub mod battery;
pub mod entropy;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod heatkernel;
pub mod inequalities;
pub mod io;
pub mod numerics;
pub mod par;
pub mod regularity;
pub mod report;

pub use error::{LabError, Result};
