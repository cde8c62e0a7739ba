//! Differentiable staggered-grid Navier-Stokes solver with a transported
//! memory learned correction.

pub mod autodiff;
pub mod binio;
pub mod datagen;
pub mod error;
pub mod fft;
pub mod grid;
pub mod metrics;
pub mod neural;
pub mod solver;
pub mod tensor;
pub mod tmn;
pub mod training;

pub use error::{Error, Result};
pub use grid::{CenteredField, Grid, StaggeredField};
pub use tensor::Tensor;
