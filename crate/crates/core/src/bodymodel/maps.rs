use super::body::ArticulatedBody;
use super::skeleton::{Affine, Pose, SkinWeights};
use super::skinning::{blended_rotation, pose_mesh};
use crate::error::Result;
use crate::geomath::{rasterize, ImagePlane, NormalMap, TriMesh, Vec3, View};

/// Image whose valid pixels hold 3D positions.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<Vec3>,
    pub mask: Vec<bool>,
}

/// Front and back canonical positional maps of a posed body.
#[derive(Clone, Debug, PartialEq)]
pub struct PosedMapPair {
    pub front: PositionMap,
    pub back: PositionMap,
}

/// Rasterises the canonical rest mesh from the front and back; each covered
/// pixel stores its surface point forward-skinned to `pose`.
pub fn render_positional_maps(body: &ArticulatedBody, pose: &Pose, plane: &ImagePlane) -> Result<PosedMapPair> {
    let transforms = body.transforms(pose)?;
    let mesh = body.mesh();
    let weights = body.vertex_weights();
    let j = body.joint_count();
    let render = |view: View| {
        let frags = rasterize(mesh, plane, view);
        let mut values = vec![Vec3::zeros(); plane.width * plane.height];
        let mut mask = vec![false; plane.width * plane.height];
        let mut w = vec![0.0; j];
        for row in 0..plane.height {
            for col in 0..plane.width {
                let Some((t, b)) = frags.at(col, row) else { continue };
                let tri = mesh.triangles[t];
                let mut p = Vec3::zeros();
                w.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..3 {
                    let vi = tri[k] as usize;
                    p += mesh.vertices[vi] * b[k];
                    for (acc, wv) in w.iter_mut().zip(weights.row(vi)) {
                        *acc += b[k] * wv;
                    }
                }
                let i = row * plane.width + col;
                values[i] = Affine::blend(&transforms, &w).apply(&p);
                mask[i] = true;
            }
        }
        PositionMap { width: plane.width, height: plane.height, values, mask }
    };
    Ok(PosedMapPair { front: render(View::Front), back: render(View::Back) })
}

/// Depth slack for the vertex visibility test, in pixels of the image plane.
const VISIBILITY_SLACK_PX: f64 = 1.5;

/// Canonical front/back maps of normals fetched from an observed image.
#[derive(Clone, Debug)]
pub struct CanonicalizedNormals {
    pub front: NormalMap,
    pub back: NormalMap,
    /// Per avatar vertex: the canonical-frame normal fetched for it, if visible.
    pub fetched: Vec<Option<Vec3>>,
}

/// Poses the canonical avatar mesh, fetches an observed normal for every
/// visible front-facing vertex (nearest pixel), rotates it back into the
/// canonical frame with the vertex's blended skinning rotation, and renders
/// those normals over the canonical mesh from the front and back. A pixel is
/// valid only if all three vertices of its triangle received a normal.
pub fn canonicalize_normal_map(
    body: &ArticulatedBody,
    pose: &Pose,
    avatar: &TriMesh,
    avatar_weights: &SkinWeights,
    observed: &NormalMap,
    observed_plane: &ImagePlane,
    canonical_plane: &ImagePlane,
) -> Result<CanonicalizedNormals> {
    let transforms = body.transforms(pose)?;
    let posed = pose_mesh(&transforms, avatar, avatar_weights)?;
    let frags = rasterize(&posed, observed_plane, View::Front);
    let posed_normals = posed.normals.as_ref().expect("pose_mesh computes normals");
    let (dx, dy) = observed_plane.pixel_size();
    let slack = VISIBILITY_SLACK_PX * dx.max(dy);

    let mut fetched = vec![None; avatar.vertices.len()];
    for (vi, p) in posed.vertices.iter().enumerate() {
        if posed_normals[vi].z <= 0.0 {
            continue;
        }
        let Some((col, row)) = observed_plane.pixel_of(p, View::Front) else { continue };
        let Some(depth) = frags.depth(col, row) else { continue };
        if p.z < depth - slack {
            continue;
        }
        let Some(n) = observed.get(col, row) else { continue };
        let r = blended_rotation(&transforms, avatar_weights.row(vi));
        fetched[vi] = Some(r.transpose().apply(&n));
    }

    let render = |view: View| {
        let frags = rasterize(avatar, canonical_plane, view);
        let mut map = NormalMap::invalid(canonical_plane.width, canonical_plane.height);
        for row in 0..canonical_plane.height {
            for col in 0..canonical_plane.width {
                let Some((t, b)) = frags.at(col, row) else { continue };
                let tri = avatar.triangles[t];
                let mut n = Vec3::zeros();
                let mut ok = true;
                for k in 0..3 {
                    match fetched[tri[k] as usize] {
                        Some(f) => n += f * b[k],
                        None => ok = false,
                    }
                }
                if ok {
                    map.set(col, row, Some(n));
                }
            }
        }
        map
    };
    Ok(CanonicalizedNormals { front: render(View::Front), back: render(View::Back), fetched })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geomath::ortho_render_normals;

    fn plane() -> ImagePlane {
        ImagePlane::canonical(64, 128)
    }

    #[test]
    fn rest_pose_maps_hold_surface_points() {
        let body = ArticulatedBody::toy(64).unwrap();
        let pair = render_positional_maps(&body, &body.rest_pose(), &plane()).unwrap();
        let frags = rasterize(body.mesh(), &plane(), View::Front);
        let pos = frags.positions(body.mesh());
        let mut n = 0;
        for (i, m) in pair.front.mask.iter().enumerate() {
            assert_eq!(*m, pos[i].is_some());
            if *m {
                assert!((pair.front.values[i] - pos[i].unwrap()).norm() < 1e-12);
                n += 1;
            }
        }
        assert!(n > 300);
    }

    #[test]
    fn translation_shifts_every_pixel() {
        let body = ArticulatedBody::toy(64).unwrap();
        let a = render_positional_maps(&body, &body.rest_pose(), &plane()).unwrap();
        let mut pose = body.rest_pose();
        pose.translation = [0.3, -0.1, 0.2];
        let b = render_positional_maps(&body, &pose, &plane()).unwrap();
        assert_eq!(a.front.mask, b.front.mask);
        assert_eq!(a.back.mask, b.back.mask);
        let t = Vec3::from(pose.translation);
        for i in 0..a.front.values.len() {
            if a.front.mask[i] {
                assert!((b.front.values[i] - a.front.values[i] - t).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn elbow_bend_moves_only_forearm_pixels() {
        let body = ArticulatedBody::toy(64).unwrap();
        let pl = plane();
        let elbow = body.joint_index("l_elbow").unwrap();
        let a = render_positional_maps(&body, &body.rest_pose(), &pl).unwrap();
        let mut pose = body.rest_pose();
        pose.set_joint(elbow, Vec3::new(0.0, 0.0, 60f64.to_radians()));
        let b = render_positional_maps(&body, &pose, &pl).unwrap();
        let frags = rasterize(body.mesh(), &pl, View::Front);
        let weights = body.vertex_weights();
        let (mut moved, mut dominant) = (0, 0);
        for row in 0..pl.height {
            for col in 0..pl.width {
                let Some((t, bary)) = frags.at(col, row) else { continue };
                let tri = body.mesh().triangles[t];
                let w: f64 = (0..3).map(|k| bary[k] * weights.row(tri[k] as usize)[elbow]).sum();
                let i = row * pl.width + col;
                let d = (b.front.values[i] - a.front.values[i]).norm();
                if d > 1e-6 {
                    moved += 1;
                    assert!(w > 0.0, "pixel ({col}, {row}) moved without forearm weight");
                }
                if w > 0.5 {
                    dominant += 1;
                    assert!(d > 1e-6, "forearm pixel ({col}, {row}) did not move");
                }
            }
        }
        assert!(moved > 20 && dominant > 20);
    }

    #[test]
    fn identity_pose_fetch_reproduces_render() {
        // Height field whose vertices sit on pixel centres so that the
        // nearest-pixel fetch returns exactly the vertex normal.
        let pl = ImagePlane::canonical(32, 64);
        let (w, h) = (12usize, 20usize);
        let mut verts = Vec::new();
        let mut normals = Vec::new();
        for r in 0..h {
            for c in 0..w {
                let (col, row) = (10 + c, 20 + r);
                let (x, y) = pl.unproject(col as f64, row as f64, View::Front);
                let z = 0.05 * (3.0 * x).sin() * (2.0 * y).cos();
                verts.push(Vec3::new(x, y, z));
                normals
                    .push(Vec3::new(-0.15 * (3.0 * x).cos() * (2.0 * y).cos(), 0.1 * (3.0 * x).sin() * (2.0 * y).sin(), 1.0).normalize());
            }
        }
        let mut tris = Vec::new();
        for r in 0..h - 1 {
            for c in 0..w - 1 {
                let i = (r * w + c) as u32;
                let (a, b, cc, d) = (i, i + 1, i + w as u32, i + w as u32 + 1);
                tris.push([a, cc, b]);
                tris.push([b, cc, d]);
            }
        }
        let mut mesh = TriMesh::new(verts, tris).unwrap();
        mesh.normals = Some(normals);
        if mesh.face_cross(0).z < 0.0 {
            mesh.flip_orientation();
            mesh.normals = Some(mesh.normals.unwrap().iter().map(|n| -n).collect());
        }
        let body = ArticulatedBody::toy(32).unwrap();
        let weights = body.weights_for(&mesh.vertices);
        let observed = ortho_render_normals(&mesh, &pl, View::Front);
        let out = canonicalize_normal_map(&body, &body.rest_pose(), &mesh, &weights, &observed, &pl, &pl).unwrap();
        let own = ortho_render_normals(&mesh, &pl, View::Front);
        let mut shared = 0;
        for i in 0..own.mask().len() {
            if own.mask()[i] && out.front.mask()[i] {
                assert!((own.normals()[i] - out.front.normals()[i]).norm() < 1e-6);
                shared += 1;
            }
        }
        assert!(shared > 100, "{shared}");
        assert!(out.front.check_invariants());
    }

    #[test]
    fn back_facing_vertices_get_nothing() {
        let body = ArticulatedBody::toy(48).unwrap();
        let pl = plane();
        let mesh = body.mesh();
        let observed = ortho_render_normals(mesh, &pl, View::Front);
        let out = canonicalize_normal_map(&body, &body.rest_pose(), mesh, body.vertex_weights(), &observed, &pl, &pl).unwrap();
        let normals = mesh.vertex_normals();
        let mut got = 0;
        for (f, n) in out.fetched.iter().zip(normals.iter()) {
            if f.is_some() {
                assert!(n.z > 0.0);
                got += 1;
            }
        }
        assert!(got > 100);
        assert!(out.back.valid_count() < out.front.valid_count() / 4);
    }

    #[test]
    fn forearm_error_rotates_fetched_normals() {
        let body = ArticulatedBody::toy(96).unwrap();
        let pl = ImagePlane::canonical(128, 256);
        let elbow = body.joint_index("l_elbow").unwrap();
        let truth = body.rest_pose();
        let mesh = body.mesh();
        let posed = pose_mesh(&body.transforms(&truth).unwrap(), mesh, body.vertex_weights()).unwrap();
        let observed = ortho_render_normals(&posed, &pl, View::Front);
        // the estimate misses a 20 degree swing of the forearm toward the camera
        let bone = (body.rest_position(elbow) - body.rest_position(body.parent(elbow).unwrap())).normalize();
        let axis = bone.cross(&Vec3::z()).normalize();
        let est = truth.perturbed(elbow, &(axis * 20f64.to_radians()));
        let out = canonicalize_normal_map(&body, &est, mesh, body.vertex_weights(), &observed, &pl, &pl).unwrap();
        let normals = mesh.vertex_normals();
        let mut angles = Vec::new();
        for (vi, f) in out.fetched.iter().enumerate() {
            let mut w = vec![0.0; body.joint_count()];
            body.weights_at(&mesh.vertices[vi], &mut w);
            if let Some(f) = f {
                if w[elbow] > 0.99 && mesh.vertices[vi].y < 0.1 {
                    angles.push(f.angle(&normals[vi]).to_degrees());
                }
            }
        }
        assert!(angles.len() > 10);
        angles.sort_by(f64::total_cmp);
        let median = angles[angles.len() / 2];
        assert!((median - 20.0).abs() < 6.0, "median {median}");
    }
}
