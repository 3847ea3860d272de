use super::mesh::TriMesh;
use super::normalmap::{ImagePlane, NormalMap, View};
use super::rotation::Vec3;

const NO_TRIANGLE: u32 = u32::MAX;

/// Nearest visible triangle and barycentric coordinates at every pixel centre.
#[derive(Clone, Debug)]
pub struct Fragments {
    pub plane: ImagePlane,
    pub view: View,
    triangle: Vec<u32>,
    bary: Vec<[f64; 3]>,
    depth: Vec<f64>,
}

impl Fragments {
    #[inline]
    pub fn at(&self, col: usize, row: usize) -> Option<(usize, [f64; 3])> {
        let i = row * self.plane.width + col;
        (self.triangle[i] != NO_TRIANGLE).then(|| (self.triangle[i] as usize, self.bary[i]))
    }

    pub fn covered(&self) -> Vec<bool> {
        self.triangle.iter().map(|&t| t != NO_TRIANGLE).collect()
    }

    /// Depth (world z) of the visible surface.
    pub fn depth(&self, col: usize, row: usize) -> Option<f64> {
        let i = row * self.plane.width + col;
        (self.triangle[i] != NO_TRIANGLE).then(|| self.depth[i])
    }

    /// Barycentric blend of a per-vertex attribute at every covered pixel.
    pub fn interpolate(&self, mesh: &TriMesh, attr: &[Vec3]) -> Vec<Option<Vec3>> {
        self.triangle
            .iter()
            .zip(&self.bary)
            .map(|(&t, b)| {
                (t != NO_TRIANGLE).then(|| {
                    let tri = mesh.triangles[t as usize];
                    attr[tri[0] as usize] * b[0] + attr[tri[1] as usize] * b[1] + attr[tri[2] as usize] * b[2]
                })
            })
            .collect()
    }

    /// World position of the visible surface point at every covered pixel.
    pub fn positions(&self, mesh: &TriMesh) -> Vec<Option<Vec3>> {
        self.interpolate(mesh, &mesh.vertices)
    }
}

/// Orthographic z-buffer rasterisation: the front view keeps the largest z,
/// the back view the smallest, and the back image is mirrored in x.
pub fn rasterize(mesh: &TriMesh, plane: &ImagePlane, view: View) -> Fragments {
    let npix = plane.width * plane.height;
    let mut frags =
        Fragments { plane: *plane, view, triangle: vec![NO_TRIANGLE; npix], bary: vec![[0.0; 3]; npix], depth: vec![f64::NAN; npix] };
    let closer = |z: f64, old: f64| {
        old.is_nan()
            || match view {
                View::Front => z > old,
                View::Back => z < old,
            }
    };
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let p: [Vec3; 3] = tri.map(|i| mesh.vertices[i as usize]);
        let q: [(f64, f64); 3] = p.map(|v| plane.project(&v, view));
        let area = (q[1].0 - q[0].0) * (q[2].1 - q[0].1) - (q[2].0 - q[0].0) * (q[1].1 - q[0].1);
        if area.abs() < 1e-14 {
            continue;
        }
        let cmin = q.iter().map(|v| v.0).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let cmax = q.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max).floor();
        let rmin = q.iter().map(|v| v.1).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let rmax = q.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max).floor();
        if cmax < 0.0 || rmax < 0.0 {
            continue;
        }
        let cmax = cmax.min(plane.width as f64 - 1.0);
        let rmax = rmax.min(plane.height as f64 - 1.0);
        let mut row = rmin;
        while row <= rmax {
            let mut col = cmin;
            while col <= cmax {
                let edge = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (row - a.1) - (col - a.0) * (b.1 - a.1);
                let w0 = edge(q[1], q[2]) / area;
                let w1 = edge(q[2], q[0]) / area;
                let w2 = 1.0 - w0 - w1;
                let tol = -1e-9;
                if w0 >= tol && w1 >= tol && w2 >= tol {
                    let z = w0 * p[0].z + w1 * p[1].z + w2 * p[2].z;
                    let i = row as usize * plane.width + col as usize;
                    if closer(z, frags.depth[i]) {
                        frags.depth[i] = z;
                        frags.triangle[i] = t as u32;
                        frags.bary[i] = [w0, w1, w2];
                    }
                }
                col += 1.0;
            }
            row += 1.0;
        }
    }
    frags
}

/// Renders interpolated unit vertex normals (world frame) with coverage as mask.
pub fn ortho_render_normals(mesh: &TriMesh, plane: &ImagePlane, view: View) -> NormalMap {
    let frags = rasterize(mesh, plane, view);
    let normals = mesh.vertex_normals();
    let vals = frags.interpolate(mesh, &normals);
    let mask: Vec<bool> = vals.iter().map(|v| v.is_some()).collect();
    let data: Vec<Vec3> = vals.into_iter().map(|v| v.unwrap_or_else(Vec3::zeros)).collect();
    NormalMap::from_parts(plane.width, plane.height, data, mask).expect("buffers sized from the plane")
}
