//! Avatar-conditioned monocular volumetric capture at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! * [`difffield`] – small differentiable compute core (MLPs, convolutions, Adam).
//! * [`geomath`] – rotations, rotation grids, meshes, marching cubes and normal-map rendering.
//! * [`bodymodel`] – a toy articulated body with linear-blend skinning.
//! * [`synthcorpus`] – procedural subjects standing in for textured scans and video frames.
//! * [`geotexavatar`] – the decomposed geometry/texture avatar with its pose-conditioned warp.
//! * [`normalfusion`] – rotation-grid Gauss-Newton fusion of avatar and observed normal maps.
//! * [`reconnet`] – image-conditioned implicit reconstruction from fused normal maps.
//! * [`io`] – the TNSR tensor container and binary PLY.

pub mod bodymodel;
pub mod difffield;
pub mod error;
pub mod geomath;
pub mod geotexavatar;
pub mod io;
pub mod normalfusion;
pub mod reconnet;
pub mod synthcorpus;

pub use error::{Error, Result};
