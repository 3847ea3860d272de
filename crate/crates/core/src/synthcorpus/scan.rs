use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::subject::SyntheticSubject;
use crate::bodymodel::{canonicalize_points, pose_mesh, Affine, Pose};
use crate::error::{contract, Result};
use crate::geomath::{rasterize, rodrigues, ImagePlane, Mat3, TriMesh, Vec3, View, ACTIVE_HI, ACTIVE_LO};

/// Distance of orthographic ray origins from the rotation axis.
pub const CAMERA_DISTANCE: f64 = 3.0;

/// Round-trip slack of [`ScanSample::canonicalize`] (meters).
pub const ROUND_TRIP_TOLERANCE: f64 = 0.02;

/// Orthographic camera circling the vertical axis; at `yaw = 0` it sits on
/// +z looking down -z, and `plane` is its image window in camera coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub yaw: f64,
    pub plane: ImagePlane,
}

impl Camera {
    pub fn rotation(&self) -> Mat3 {
        *rodrigues(&Vec3::new(0.0, self.yaw, 0.0)).matrix()
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation().transpose() * p
    }

    /// World-space origin and unit direction of the ray through a pixel centre.
    pub fn ray(&self, col: usize, row: usize) -> (Vec3, Vec3) {
        let r = self.rotation();
        let (x, y) = self.plane.unproject(col as f64, row as f64, View::Front);
        (r * Vec3::new(x, y, CAMERA_DISTANCE), r * Vec3::new(0.0, 0.0, -1.0))
    }
}

/// One rendered colour image; background pixels are black and unmasked.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorView {
    pub camera: Camera,
    pub rgb: Vec<Vec3>,
    pub mask: Vec<bool>,
}

/// Render settings of a scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSettings {
    pub views: usize,
    /// Marching-cubes nodes per axis of the canonical volume.
    pub resolution: usize,
    /// Square view images of this many pixels per side.
    pub image_size: usize,
    /// Half extent of the square view window (meters).
    pub half_extent: f64,
}

impl Default for ScanSettings {
    fn default() -> Self {
        Self { views: 12, resolution: 96, image_size: 64, half_extent: 1.0 }
    }
}

/// A posed subject with its oracles, surfaces and colour renders.
#[derive(Clone, Debug)]
pub struct ScanSample {
    pub subject: Arc<SyntheticSubject>,
    pub pose: Pose,
    pub transforms: Vec<Affine>,
    pub canonical_mesh: TriMesh,
    /// `canonical_mesh` forward-skinned with analytic weights; same topology.
    pub posed_mesh: TriMesh,
    pub views: Vec<ColorView>,
    pub watertight: bool,
}

impl ScanSample {
    pub fn occupancy(&self, p: &Vec3) -> f64 {
        self.subject.occupancy(p, &self.pose)
    }

    pub fn color(&self, p: &Vec3) -> Vec3 {
        self.subject.color(p, &self.pose)
    }

    pub fn sdf(&self, p: &Vec3) -> f64 {
        self.subject.sdf(p, &self.pose)
    }

    /// Canonical positions of posed points; see [`canonicalize_points`].
    pub fn canonicalize(&self, points: &[Vec3]) -> Result<Vec<Option<Vec3>>> {
        canonicalize_points(self.subject.body(), &self.transforms, points, ROUND_TRIP_TOLERANCE)
    }
}

pub fn sample_scan(subject: &Arc<SyntheticSubject>, pose: &Pose, settings: &ScanSettings) -> Result<ScanSample> {
    if settings.views < 2 {
        return Err(contract("a scan needs at least two views"));
    }
    if settings.image_size == 0 || !(settings.half_extent > 0.0) {
        return Err(contract("view images need a positive size and extent"));
    }
    let body = subject.body();
    let transforms = body.transforms(pose)?;
    let canonical_mesh = subject.canonical_mesh(pose, settings.resolution)?;
    let weights = body.weights_for(&canonical_mesh.vertices);
    let posed_mesh = pose_mesh(&transforms, &canonical_mesh, &weights)?;
    let h = settings.half_extent;
    let plane = ImagePlane { x_min: -h, x_max: h, y_min: -h, y_max: h, width: settings.image_size, height: settings.image_size };
    let views = (0..settings.views)
        .map(|k| {
            let camera = Camera { yaw: std::f64::consts::TAU * k as f64 / settings.views as f64, plane };
            render_view(subject, pose, &canonical_mesh, &posed_mesh, camera)
        })
        .collect();
    Ok(ScanSample {
        subject: Arc::clone(subject),
        pose: pose.clone(),
        transforms,
        watertight: canonical_mesh.boundary_edge_count() == 0,
        canonical_mesh,
        posed_mesh,
        views,
    })
}

fn render_view(subject: &SyntheticSubject, pose: &Pose, canonical: &TriMesh, posed: &TriMesh, camera: Camera) -> ColorView {
    let rt = camera.rotation().transpose();
    let local = TriMesh {
        vertices: posed.vertices.iter().map(|v| rt * v).collect(),
        triangles: posed.triangles.clone(),
        colors: None,
        normals: None,
    };
    let frags = rasterize(&local, &camera.plane, View::Front);
    let canonical_points = frags.interpolate(canonical, &canonical.vertices);
    let mut rgb = Vec::with_capacity(canonical_points.len());
    let mut mask = Vec::with_capacity(canonical_points.len());
    for p in canonical_points {
        match p {
            Some(p) => {
                rgb.push(subject.color(&p, pose));
                mask.push(true);
            }
            None => {
                rgb.push(Vec3::zeros());
                mask.push(false);
            }
        }
    }
    ColorView { camera, rgb, mask }
}

/// Canonical points with binary occupancy labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledPoints {
    pub points: Vec<Vec3>,
    pub labels: Vec<f64>,
}

impl LabeledPoints {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Point counts and ranges for [`sample_points`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointSampling {
    pub n_surface: usize,
    pub n_uniform: usize,
    /// Standard deviation of the isotropic offset of near-surface samples.
    pub sigma_near: f64,
    /// Box of the uniform samples.
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Default for PointSampling {
    fn default() -> Self {
        Self { n_surface: 4000, n_uniform: 1000, sigma_near: 0.015, lo: ACTIVE_LO, hi: ACTIVE_HI }
    }
}

/// Near-surface samples (exact surface points offset by a Gaussian) and
/// uniform box samples, labelled by the occupancy oracle.
pub fn sample_points(scan: &ScanSample, s: &PointSampling, rng: &mut impl Rng) -> Result<LabeledPoints> {
    if !(s.sigma_near >= 0.0) {
        return Err(contract("near-surface sigma must be nonnegative"));
    }
    let mut points = Vec::with_capacity(s.n_surface + s.n_uniform);
    if s.n_surface > 0 {
        let mesh = &scan.canonical_mesh;
        let areas: Vec<f64> = (0..mesh.triangles.len()).map(|t| mesh.face_cross(t).norm()).collect();
        let pick = WeightedIndex::new(&areas).map_err(|_| contract("scan surface has no area"))?;
        while points.len() < s.n_surface {
            let [a, b, c] = mesh.corners(pick.sample(rng));
            let (u, v): (f64, f64) = (rng.random(), rng.random());
            let (u, v) = if u + v > 1.0 { (1.0 - u, 1.0 - v) } else { (u, v) };
            let Some(p) = scan.subject.project_to_surface(&(a + (b - a) * u + (c - a) * v), &scan.pose) else {
                continue;
            };
            let n: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
            points.push(p + Vec3::from(n) * s.sigma_near);
        }
    }
    for _ in 0..s.n_uniform {
        points.push(Vec3::from(std::array::from_fn(|k| rng.random_range(s.lo[k]..=s.hi[k]))));
    }
    let labels = points.iter().map(|p| scan.occupancy(p)).collect();
    Ok(LabeledPoints { points, labels })
}
