//! Image-conditioned implicit reconstruction: a conv feature pyramid over
//! the fused canonical normal maps conditions an occupancy decoder; the
//! extracted canonical surface is posed by forward skinning.

mod nets;
mod train;

pub use nets::{recon_eval, stack_maps, DecodeTape, Encoding, ReconArch, ReconNets, INPUT_CHANNELS};
pub use train::{recon_loss, recon_loss_and_grad, train_recon, ReconTrainConfig, TrainedRecon};

use crate::bodymodel::{pose_mesh, ArticulatedBody, Pose};
use crate::error::{contract, Error, Result};
use crate::geomath::{marching_cubes, rasterize, ImagePlane, NormalMap, ScalarGrid, TriMesh, View};

const GRID_BATCH: usize = 4096;

/// Reconstructed surface in canonical and posed space (same topology).
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub canonical: TriMesh,
    pub posed: TriMesh,
}

/// Predicted occupancy on the canonical `n^3` grid (zero outside the
/// active region).
pub fn occupancy_grid(nets: &ReconNets, front: &NormalMap, back: &NormalMap, n: usize) -> Result<ScalarGrid> {
    let enc = nets.encode(front, back)?;
    let mut grid = ScalarGrid::canonical(n, 0.0)?;
    let mut failure = None;
    grid.fill_active(0.0, GRID_BATCH, |pts| match nets.eval(&enc, pts) {
        Ok(v) => v,
        Err(e) => {
            failure.get_or_insert(e);
            vec![0.0; pts.len()]
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(grid),
    }
}

/// Extracts the 0.5 level set, transfers nearest-vertex skinning weights
/// from the body's rest mesh and forward-skins the surface to `pose`.
pub fn reconstruct(
    nets: &ReconNets,
    front: &NormalMap,
    back: &NormalMap,
    pose: &Pose,
    body: &ArticulatedBody,
    n: usize,
) -> Result<Reconstruction> {
    let grid = occupancy_grid(nets, front, back, n)?;
    let mut canonical = marching_cubes(&grid, 0.5)?;
    if canonical.triangles.is_empty() {
        return Err(Error::EmptySurface);
    }
    canonical.flip_orientation();
    let canonical = canonical.with_computed_normals();
    let weights = body.transfer_weights(&canonical.vertices);
    let posed = pose_mesh(&body.transforms(pose)?, &canonical, &weights)?;
    Ok(Reconstruction { canonical, posed })
}

/// Intersection over union of the `> 0.5` regions of two grids sampled
/// at the same nodes.
pub fn voxel_iou(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(contract("occupancy grids differ in size"));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x > 0.5, *y > 0.5);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// IoU of the mesh's front silhouette on `plane` against a map's mask.
pub fn silhouette_iou(mesh: &TriMesh, map: &NormalMap, plane: &ImagePlane) -> Result<f64> {
    if plane.width != map.width() || plane.height != map.height() {
        return Err(contract("silhouette plane does not match the map"));
    }
    let covered = rasterize(mesh, plane, View::Front).covered();
    let (mut inter, mut union) = (0usize, 0usize);
    for (c, m) in covered.iter().zip(map.mask()) {
        inter += (*c && *m) as usize;
        union += (*c || *m) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}
