//! Potential theory on step-two Carnot groups: group law, homogeneous gauge
//! and fundamental solution, the gauge polar flow, Giraud-type kernel
//! bounds, potentials of Radon measures and Hausdorff-dimension estimates.

pub mod chart;
pub mod error;
pub mod gauge;
pub mod giraud;
pub mod group;
pub mod hausdorff;
pub mod hypercomplex;
pub mod ode;
pub mod polar;
pub mod potential;
pub mod quadrature;
pub mod rng;
pub mod stats;
pub mod stencil;

pub use error::{CarnotError, Result};
pub use gauge::{
    BumpProfile, BumpSpec, CalibrationReport, GaugeBall, GaugeFn, GaugeKind, GridSpec,
};
pub use group::{CoordBox, GroupKind, GroupSpec, GroupStructure, LayerSpec, Point};
