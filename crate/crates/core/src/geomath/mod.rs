//! Rotations, rotation grids, scalar grids, meshes and orthographic normal rendering.

pub mod grid;
pub mod highpass;
pub mod marching_cubes;
pub mod mesh;
pub mod normalmap;
pub mod raster;
pub mod rotation;
pub mod rotgrid;
pub mod spatial;

pub use grid::{ScalarGrid, ACTIVE_HI, ACTIVE_LO};
pub use highpass::{highpass, Residual};
pub use marching_cubes::marching_cubes;
pub use mesh::{uv_sphere, TriMesh};
pub use normalmap::{angle_between, ImagePlane, NormalMap, View};
pub use raster::{ortho_render_normals, rasterize, Fragments};
pub use rotation::{geodesic_angle, left_jacobian_inv, rod_inv, rodrigues, skew, Mat3, Rot3, Vec3};
pub use rotgrid::RotationGrid;
pub use spatial::{hausdorff, PointIndex, SurfaceIndex};
