use super::body::ArticulatedBody;
use super::skeleton::{Affine, Pose, SkinWeights};
use crate::error::{contract, Result};
use crate::geomath::{Rot3, TriMesh, Vec3};

/// Blends whose linear part has a larger condition number are rejected.
pub const MAX_BLEND_CONDITION: f64 = 1e6;

fn check(points: usize, weights: &SkinWeights, transforms: &[Affine]) -> Result<()> {
    if weights.len() != points {
        return Err(contract("one weight row per point is required"));
    }
    if weights.joints() != transforms.len() {
        return Err(contract("weight rows and joint transforms disagree"));
    }
    Ok(())
}

/// `x_posed = sum_j w_j G_j x_c`.
pub fn forward_skin_with(transforms: &[Affine], points: &[Vec3], weights: &SkinWeights) -> Result<Vec<Vec3>> {
    check(points.len(), weights, transforms)?;
    Ok(points.iter().enumerate().map(|(i, p)| Affine::blend(transforms, weights.row(i)).apply(p)).collect())
}

/// Inverts each point's blended transform; points whose blend is
/// near-singular come back as `None`.
pub fn inverse_skin_with(transforms: &[Affine], points: &[Vec3], weights: &SkinWeights) -> Result<Vec<Option<Vec3>>> {
    check(points.len(), weights, transforms)?;
    Ok(points.iter().enumerate().map(|(i, p)| invert_blend(&Affine::blend(transforms, weights.row(i)), p)).collect())
}

fn invert_blend(b: &Affine, p: &Vec3) -> Option<Vec3> {
    let sv = b.m.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 0.0) || smax / smin > MAX_BLEND_CONDITION {
        return None;
    }
    b.m.try_inverse().map(|inv| inv * (p - b.t))
}

/// Inverse skinning of posed-space points: weights come from the posed
/// capsules, and a result is kept only if forward skinning it with its own
/// canonical weights lands within `tolerance` of the input. The check drops
/// points that invert into a different limb's canonical territory.
pub fn canonicalize_points(body: &ArticulatedBody, transforms: &[Affine], points: &[Vec3], tolerance: f64) -> Result<Vec<Option<Vec3>>> {
    let posed_w = body.posed_weights_for(transforms, points);
    let inv = inverse_skin_with(transforms, points, &posed_w)?;
    let mut row = vec![0.0; body.joint_count()];
    Ok(inv
        .into_iter()
        .zip(points)
        .map(|(c, p)| {
            let c = c?;
            body.weights_at(&c, &mut row);
            ((Affine::blend(transforms, &row).apply(&c) - p).norm() <= tolerance).then_some(c)
        })
        .collect())
}

/// Nearest rotation to the blended linear part.
pub fn blended_rotation(transforms: &[Affine], weights: &[f64]) -> Rot3 {
    Rot3::project(&Affine::blend(transforms, weights).m)
}

pub fn forward_skin(body: &ArticulatedBody, pose: &Pose, points: &[Vec3], weights: &SkinWeights) -> Result<Vec<Vec3>> {
    forward_skin_with(&body.transforms(pose)?, points, weights)
}

pub fn inverse_skin(body: &ArticulatedBody, pose: &Pose, points: &[Vec3], weights: &SkinWeights) -> Result<Vec<Option<Vec3>>> {
    inverse_skin_with(&body.transforms(pose)?, points, weights)
}

/// Poses a canonical mesh; topology is kept and normals recomputed.
pub fn pose_mesh(transforms: &[Affine], mesh: &TriMesh, weights: &SkinWeights) -> Result<TriMesh> {
    let vertices = forward_skin_with(transforms, &mesh.vertices, weights)?;
    Ok(TriMesh { vertices, triangles: mesh.triangles.clone(), colors: mesh.colors.clone(), normals: None }.with_computed_normals())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bodymodel::skeleton::{BodyDef, CapsuleDef, JointDef};
    use crate::geomath::{rodrigues, Mat3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(body: &ArticulatedBody, rng: &mut ChaCha8Rng, max: f64) -> Pose {
        let mut p = body.rest_pose();
        for j in 0..body.joint_count() {
            let w = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            p.set_joint(j, w.normalize() * rng.random_range(0.0..max));
        }
        p.translation = [rng.random_range(-0.2..0.2), 0.1, rng.random_range(-0.2..0.2)];
        p
    }

    #[test]
    fn rest_pose_is_identity() {
        let body = ArticulatedBody::toy(48).unwrap();
        let v = &body.mesh().vertices;
        let out = forward_skin(&body, &body.rest_pose(), v, body.vertex_weights()).unwrap();
        for (a, b) in v.iter().zip(&out) {
            assert!((a - b).norm() < 1e-12);
        }
        let back = inverse_skin(&body, &body.rest_pose(), v, body.vertex_weights()).unwrap();
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b.unwrap()).norm() < 1e-12);
        }
    }

    #[test]
    fn single_joint_quarter_turn() {
        let def = BodyDef {
            falloff: 0.05,
            joints: vec![JointDef { name: "j".into(), parent: None, offset: [0.2, 0.1, 0.0] }],
            capsules: vec![CapsuleDef { joint: "j".into(), a: [0.0; 3], b: [0.2, 0.0, 0.0], radius: 0.1 }],
        };
        let body = ArticulatedBody::from_def(&def, 24).unwrap();
        let mut pose = body.rest_pose();
        pose.set_joint(0, Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let o = body.rest_position(0);
        let w = SkinWeights::from_rows(1, vec![1.0]).unwrap();
        let out = forward_skin(&body, &pose, &[o + Vec3::x()], &w).unwrap();
        assert!((out[0] - (o + Vec3::y())).norm() < 1e-15);
    }

    #[test]
    fn round_trip_random_surface_points() {
        let body = ArticulatedBody::toy(96).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mesh = body.mesh();
        let mut pts = Vec::new();
        while pts.len() < 10_000 {
            let t = rng.random_range(0..mesh.triangles.len());
            let [a, b, c] = mesh.corners(t);
            let (u, v): (f64, f64) = (rng.random(), rng.random());
            let (u, v) = if u + v > 1.0 { (1.0 - u, 1.0 - v) } else { (u, v) };
            pts.push(a + (b - a) * u + (c - a) * v);
        }
        let w = body.weights_for(&pts);
        let pose = random_pose(&body, &mut rng, 1.0);
        let posed = forward_skin(&body, &pose, &pts, &w).unwrap();
        let back = inverse_skin(&body, &pose, &posed, &w).unwrap();
        let err = pts.iter().zip(&back).map(|(p, q)| (p - q.expect("invertible")).norm()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn opposing_half_turns_are_flagged() {
        let r = *rodrigues(&Vec3::new(0.0, 0.999_999_9 * std::f64::consts::PI, 0.0)).matrix();
        let a = Affine { m: r, t: Vec3::zeros() };
        let b = Affine { m: Mat3::identity(), t: Vec3::zeros() };
        let w = SkinWeights::from_rows(2, vec![0.5, 0.5]).unwrap();
        let out = inverse_skin_with(&[a, b], &[Vec3::new(0.1, 0.2, 0.3)], &w).unwrap();
        assert!(out[0].is_none());
    }

    #[test]
    fn round_trip_check_rejects_ghosts() {
        let body = ArticulatedBody::toy(48).unwrap();
        let mut pose = body.rest_pose();
        let shoulder = body.joint_index("l_shoulder").unwrap();
        pose.set_joint(shoulder, Vec3::new(0.0, 0.0, 1.2));
        let tr = body.transforms(&pose).unwrap();
        // beside the trunk where the left arm hangs at rest; the posed arm is raised away
        let ghost = Vec3::new(0.25, 0.2, 0.0);
        let surface = Vec3::new(0.0, 0.1, 0.14);
        let plain = inverse_skin_with(&tr, &[ghost], &body.posed_weights_for(&tr, &[ghost])).unwrap();
        assert!(body.sdf(&plain[0].unwrap()) < 0.0, "plain inverse lands in the rest arm");
        let out = canonicalize_points(&body, &tr, &[ghost, surface], 0.02).unwrap();
        assert!(out[0].is_none());
        assert!((out[1].unwrap() - surface).norm() < 1e-12);
    }

    #[test]
    fn rigid_per_joint() {
        let body = ArticulatedBody::toy(64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pose = random_pose(&body, &mut rng, 1.2);
        let j = body.joint_index("l_elbow").unwrap();
        let mut row = vec![0.0; body.joint_count()];
        row[j] = 1.0;
        let pts: Vec<Vec3> =
            (0..50).map(|_| Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3))).collect();
        let w = SkinWeights::from_rows(body.joint_count(), pts.iter().flat_map(|_| row.clone()).collect()).unwrap();
        let posed = forward_skin(&body, &pose, &pts, &w).unwrap();
        for i in 0..pts.len() {
            for k in 0..i {
                let d0 = (pts[i] - pts[k]).norm();
                let d1 = (posed[i] - posed[k]).norm();
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
    }
}
