//! Fluid-driven synthetic anomaly generation on 3D voxel grids.
//!
//! The crate is `no_std` (with `alloc`) and holds every numerical piece of the
//! generator: grid containers, seeded Perlin noise, incompressible velocity and
//! non-negative diffusion fields, the advection-diffusion transport solver,
//! random-contrast synthesis with anomaly encoding, acquisition corruption, and
//! the reconstruction/contrastive objectives and image metrics.
//!
//! File formats, batch orchestration and the command line live in the `forge`
//! crate.
//!
//! Axis convention for every grid: axis 0 is left-right (the sagittal flip
//! axis), axis 1 posterior-anterior, axis 2 inferior-superior. Data are stored
//! row-major, so axis 2 is the fastest-varying index.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod corruption;
pub mod error;
pub mod fields;
pub mod filter;
mod math;
pub mod noise;
pub mod objective;
pub mod phantom;
pub mod rng;
pub mod sample;
pub mod synthesis;
pub mod transport;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{
    LabelRole, LabelVolume, Mask3, MaskOp, ScalarField3, Shape3, Spacing3, VectorField3,
};
