#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod alignment;
pub mod calibration;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod registration;
pub mod simulation;
pub mod tracking;

pub use error::{Error, Result};
pub use geometry::{Line3, PmObservation, RigidTransform, TrusGeometry, Vec3};
pub use nalgebra;
