//! File formats: the TNSR named-tensor container and binary PLY meshes.

pub mod convert;
pub mod ply;
pub mod tnsr;

pub use convert::{get_conv, get_grid, get_mlp, get_normal_map, put_conv, put_grid, put_mlp, put_normal_map};
pub use ply::{load_ply, read_ply, save_ply, write_ply};
pub use tnsr::{Tensor, TensorData, TnsrFile};
