//! Adaptive P1 finite elements for the stochastic Cahn-Hilliard equation.
//!
//! The crate provides conforming bisection meshes, finite element assembly,
//! Q-Wiener noise sampling, the coupled and split time-stepping schemes, the
//! principal eigenvalue of the linearized operator, residual error indicators
//! with the assembled pathwise and Monte-Carlo bounds, an adaptive driver and
//! plain-text I/O.

pub mod adaptivity;
pub mod config;
pub mod driver;
pub mod error;
pub mod estimators;
pub mod fem;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod noise;
pub mod quadrature;
pub mod schemes;
pub mod spectral;

pub use error::{Error, Result};
pub use fem::FeFunction;
pub use mesh::{MarkSet, Mesh, Square};
