use super::nets::{GeoTexNets, PoseInput};
use super::render::composite;
use crate::bodymodel::{ArticulatedBody, Pose};
use crate::error::{contract, Error, Result};
use crate::geomath::{marching_cubes, ortho_render_normals, ImagePlane, NormalMap, PointIndex, ScalarGrid, TriMesh, Vec3, View};

const GRID_BATCH: usize = 4096;

/// Canonical avatar surface at one pose and its canonical front/back normal maps.
#[derive(Clone, Debug)]
pub struct AnimatedFrame {
    pub mesh: TriMesh,
    pub front: NormalMap,
    pub back: NormalMap,
}

fn fill(resolution: usize, mut eval: impl FnMut(&[Vec3]) -> Result<Vec<f64>>) -> Result<ScalarGrid> {
    let mut grid = ScalarGrid::canonical(resolution, 0.0)?;
    let mut failure = None;
    grid.fill_active(0.0, GRID_BATCH, |pts| match eval(pts) {
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

/// Posed occupancy `T_Geo(x + dW(x, pose))` on the canonical volume.
pub fn occupancy_grid(nets: &GeoTexNets, input: &PoseInput, resolution: usize) -> Result<ScalarGrid> {
    fill(resolution, |pts| Ok(nets.field(pts, input, false)?.occupancy))
}

/// Outward-oriented 0.5 level set of an occupancy grid.
fn surface(grid: &ScalarGrid) -> Result<TriMesh> {
    let mut mesh = marching_cubes(grid, 0.5)?;
    if mesh.triangles.is_empty() {
        return Err(Error::EmptySurface);
    }
    mesh.flip_orientation();
    Ok(mesh.with_computed_normals())
}

/// Surface of the template itself (no warp).
pub fn template_mesh(nets: &GeoTexNets, resolution: usize) -> Result<TriMesh> {
    surface(&fill(resolution, |pts| Ok(nets.template_fields(pts, false)?.occupancy))?)
}

/// Extracts the avatar at `pose` and renders its canonical normal maps on `plane`.
pub fn animate(nets: &GeoTexNets, body: &ArticulatedBody, pose: &Pose, resolution: usize, plane: &ImagePlane) -> Result<AnimatedFrame> {
    let input = nets.pose_input(body, pose)?;
    let mesh = surface(&occupancy_grid(nets, &input, resolution)?)?;
    Ok(AnimatedFrame { front: ortho_render_normals(&mesh, plane, View::Front), back: ortho_render_normals(&mesh, plane, View::Back), mesh })
}

/// Per-vertex colours by compositing the avatar along the inward normal ray
/// `v - t n` for `t` in `[-delta, delta]`. The composite is divided by its
/// accumulated opacity, so the short ray does not fade towards black.
pub fn generate_texture(nets: &GeoTexNets, input: &PoseInput, mesh: &TriMesh, delta: f64, samples: usize) -> Result<Vec<Vec3>> {
    if !(delta > 0.0) || samples < 2 {
        return Err(contract("texture rays need a positive half length and two samples"));
    }
    let normals = mesh.vertex_normals();
    let step = 2.0 * delta / samples as f64;
    let deltas = vec![step; samples];
    let mut colors = Vec::with_capacity(mesh.vertices.len());
    for chunk in (0..mesh.vertices.len()).collect::<Vec<_>>().chunks(GRID_BATCH / samples.max(1) + 1) {
        let pts: Vec<Vec3> = chunk
            .iter()
            .flat_map(|&v| {
                let (p, n) = (mesh.vertices[v], normals[v]);
                (0..samples).map(move |k| p + n * (delta - (k as f64 + 0.5) * step))
            })
            .collect();
        let out = nets.field(&pts, input, true)?;
        for (sigma, c) in out.density.chunks(samples).zip(out.colors.chunks(samples)) {
            let (color, weights) = composite(sigma, &deltas, c)?;
            let opacity: f64 = weights.iter().sum();
            colors.push(if opacity > 1e-12 { color / opacity } else { Vec3::zeros() });
        }
    }
    Ok(colors)
}

/// Labels every vertex of a canonical avatar mesh by warping it into the
/// template and copying the side of `plane_height` of the nearest template
/// vertex (`true` above).
pub fn correspondence_labels(
    nets: &GeoTexNets,
    input: &PoseInput,
    mesh: &TriMesh,
    template: &TriMesh,
    plane_height: f64,
) -> Result<Vec<bool>> {
    if template.vertices.is_empty() {
        return Err(Error::EmptySurface);
    }
    let index = PointIndex::new(&template.vertices, 0.05);
    let warped = nets.warp_points(&mesh.vertices, input)?;
    Ok(warped
        .iter()
        .map(|p| {
            let (i, _) = index.nearest(p).expect("template is not empty");
            template.vertices[i].y > plane_height
        })
        .collect())
}

/// Mean height at which mesh edges with differently labelled endpoints
/// cross the label plane, restricted to edges with both endpoints at
/// `|x| < x_limit`. The crossing is interpolated linearly between the
/// endpoints using their template-space heights `warped`.
pub fn boundary_height(mesh: &TriMesh, warped: &[Vec3], labels: &[bool], plane_height: f64, x_limit: f64) -> Option<f64> {
    if warped.len() != mesh.vertices.len() || labels.len() != mesh.vertices.len() {
        return None;
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for tri in &mesh.triangles {
        for e in 0..3 {
            let (a, b) = (tri[e] as usize, tri[(e + 1) % 3] as usize);
            // Each interior edge appears twice with opposite orientation.
            if a > b || labels[a] == labels[b] {
                continue;
            }
            let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
            if pa.x.abs() < x_limit && pb.x.abs() < x_limit {
                let (ya, yb) = (warped[a].y, warped[b].y);
                let t = if (yb - ya).abs() > 1e-12 { ((plane_height - ya) / (yb - ya)).clamp(0.0, 1.0) } else { 0.5 };
                sum += pa.y + t * (pb.y - pa.y);
                count += 1;
            }
        }
    }
    (count > 0).then(|| sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::super::nets::{AvatarArch, PoseEncoderKind};
    use super::*;
    use crate::difffield::{Activation, Layer, Mat, MlpNet};
    use crate::geomath::uv_sphere;

    fn tiny() -> GeoTexNets {
        let arch = AvatarArch {
            posenc_order: 2,
            trunk_width: 8,
            trunk_layers: 1,
            head_width: 4,
            warp_width: 4,
            warp_layers: 1,
            pose_encoder: PoseEncoderKind::Vector,
            ..AvatarArch::default()
        };
        GeoTexNets::new(&arch, 8).unwrap()
    }

    /// Hand-set template: occupancy `sigmoid(40 (r - |x|_1))` (an octahedron),
    /// constant density and constant colour.
    fn octahedron_nets(r: f64, color: [f64; 3], density_raw: f64) -> GeoTexNets {
        let mut nets = tiny();
        let enc = nets.posenc.output_dim();
        // Trunk: 6 ReLU units max(0, +-x_a).
        let mut w = Mat::zeros(6, enc);
        for a in 0..3 {
            w.set(2 * a, a, 1.0);
            w.set(2 * a + 1, a, -1.0);
        }
        nets.template.trunk = MlpNet::from_layers(vec![Layer::new(w, vec![0.0; 6], Activation::Relu).unwrap()]).unwrap();
        // Geo head: identity hidden layer, then s = k (r - sum |x_a|), density constant.
        let mut h = Mat::zeros(6, 6);
        (0..6).for_each(|i| h.set(i, i, 1.0));
        let mut out = Mat::zeros(2, 6);
        (0..6).for_each(|i| out.set(0, i, -40.0));
        nets.template.geo = MlpNet::from_layers(vec![
            Layer::new(h.clone(), vec![0.0; 6], Activation::Relu).unwrap(),
            Layer::new(out, vec![40.0 * r, density_raw], Activation::None).unwrap(),
        ])
        .unwrap();
        let logit = |c: f64| (c / (1.0 - c)).ln();
        nets.template.tex = MlpNet::from_layers(vec![
            Layer::new(Mat::zeros(6, 6 + enc), vec![0.0; 6], Activation::Relu).unwrap(),
            Layer::new(Mat::zeros(3, 6), color.iter().map(|c| logit(*c)).collect(), Activation::Sigmoid).unwrap(),
        ])
        .unwrap();
        nets
    }

    #[test]
    fn constant_field_textures_every_vertex_with_its_colour() {
        let color = [0.2, 0.7, 0.4];
        let nets = octahedron_nets(0.3, color, 8.0);
        let mesh = uv_sphere(Vec3::new(0.0, 0.1, 0.0), 0.2, 8, 12);
        let input = PoseInput::Vector(vec![0.0; 24]);
        let tex = generate_texture(&nets, &input, &mesh, 0.02, 32).unwrap();
        for c in tex {
            assert!((c - Vec3::from(color)).amax() < 1e-3, "{c:?}");
        }
    }

    #[test]
    fn texture_does_not_depend_on_vertex_order() {
        let mut nets = octahedron_nets(0.3, [0.5, 0.5, 0.5], 1.0);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(9);
        nets.template.tex = MlpNet::random(&[6 + nets.posenc.output_dim(), 4, 3], Activation::Relu, Activation::Sigmoid, &mut rng);
        let mesh = uv_sphere(Vec3::zeros(), 0.25, 6, 10);
        let input = PoseInput::Vector(vec![0.0; 24]);
        let tex = generate_texture(&nets, &input, &mesh, 0.02, 16).unwrap();
        let n = mesh.vertices.len();
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
        let shuffled = TriMesh {
            vertices: perm.iter().map(|&i| mesh.vertices[i]).collect(),
            triangles: Vec::new(),
            colors: None,
            normals: Some(perm.iter().map(|&i| mesh.vertex_normals()[i]).collect()),
        };
        let tex2 = generate_texture(&nets, &input, &shuffled, 0.02, 16).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(tex2[k], tex[i]);
        }
    }

    #[test]
    fn animated_octahedron_is_outward_and_renders() {
        let nets = octahedron_nets(0.3, [0.5; 3], 0.0);
        let body = ArticulatedBody::toy(48).unwrap();
        let frame = animate(&nets, &body, &body.rest_pose(), 48, &ImagePlane::canonical(32, 64)).unwrap();
        assert!(frame.mesh.signed_volume() > 0.0);
        // |x|_1 < 0.3 holds 4/3 r^3.
        let v = frame.mesh.signed_volume();
        assert!((v - 4.0 / 3.0 * 0.027).abs() < 0.1 * 0.036, "volume {v}");
        assert!(frame.front.valid_count() > 0 && frame.back.valid_count() > 0);
    }

    #[test]
    fn empty_field_is_an_error() {
        let nets = octahedron_nets(-0.2, [0.5; 3], 0.0);
        let body = ArticulatedBody::toy(48).unwrap();
        let r = animate(&nets, &body, &body.rest_pose(), 24, &ImagePlane::canonical(16, 32));
        assert!(matches!(r, Err(Error::EmptySurface)));
    }

    #[test]
    fn identity_warp_labels_by_plane_side() {
        let nets = tiny();
        let template = uv_sphere(Vec3::zeros(), 0.4, 24, 24);
        let mesh = uv_sphere(Vec3::zeros(), 0.4, 24, 24);
        let input = PoseInput::Vector(vec![0.2; 24]);
        let labels = correspondence_labels(&nets, &input, &mesh, &template, 0.1).unwrap();
        for (p, l) in mesh.vertices.iter().zip(&labels) {
            assert_eq!(*l, p.y > 0.1);
        }
        assert_eq!(labels, correspondence_labels(&nets, &input, &mesh, &template, 0.1).unwrap());
        let h = boundary_height(&mesh, &mesh.vertices, &labels, 0.1, 1.0).unwrap();
        assert!((h - 0.1).abs() < 0.01, "boundary at {h}");
    }
}
