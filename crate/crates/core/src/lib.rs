//! Orientation recovery for simulated cryo-EM projections.
//!
//! The crate is generic over the floating point type through [`Real`]; the
//! aliases at the bottom of this file fix the geometry types to `f64`. Networks
//! train in `f32` unless the run config asks for `f64`.

pub mod error;
pub mod fourier;
pub mod loss_schedule;
pub mod nn;
pub mod pipeline;
pub mod recon_eval;
pub mod rep_heads;
pub mod sampling;
pub mod scalar;
pub mod simulator;
pub mod so3;
pub mod sym_eigen;
pub mod table;
pub mod uncertainty;

pub use error::{Error, Result};
pub use scalar::Real;
pub use so3::{EulerZyz, RotationMatrix, SymmetryGroup, SymmetryKind, UnitQuaternion};

pub type Quat = UnitQuaternion<f64>;
pub type Euler = EulerZyz<f64>;
pub type Rotation = RotationMatrix<f64>;
pub type Symmetry = SymmetryGroup<f64>;
