use rand::Rng;

use super::subject::SyntheticSubject;
use crate::bodymodel::{pose_mesh, ArticulatedBody, Pose};
use crate::error::{contract, Result};
use crate::geomath::{ortho_render_normals, rodrigues, ImagePlane, NormalMap, TriMesh, Vec3, View};

/// A frame as the capture pipeline sees it: a posed-space front normal map
/// and an imperfect pose estimate.
#[derive(Clone, Debug)]
pub struct Observation {
    pub normals: NormalMap,
    pub plane: ImagePlane,
    pub true_pose: Pose,
    pub estimated_pose: Pose,
    /// Ground-truth posed surface.
    pub posed_mesh: TriMesh,
    /// Ground-truth canonical surface (same topology as `posed_mesh`).
    pub canonical_mesh: TriMesh,
}

/// Square posed-space window used for observed maps.
pub fn observation_plane(size: usize) -> ImagePlane {
    ImagePlane { x_min: -1.0, x_max: 1.0, y_min: -1.0, y_max: 1.0, width: size, height: size }
}

/// Rotation vector that swings a child joint's bone out of the image plane
/// (about the in-plane axis perpendicular to the bone) by `degrees`.
pub fn out_of_plane_swing(body: &ArticulatedBody, joint: usize, degrees: f64) -> Result<Vec3> {
    let parent = body.parent(joint).ok_or_else(|| contract("the root has no bone to swing"))?;
    let bone = body.rest_position(joint) - body.rest_position(parent);
    let axis = bone.cross(&Vec3::z());
    if !(axis.norm() > 1e-12) {
        return Err(contract("bone is parallel to the viewing axis"));
    }
    Ok(axis.normalize() * degrees.to_radians())
}

/// Renders the subject at `pose` from the front, perturbs the pose estimate
/// by `pose_error` (joint, rotation vector applied on the right), and tilts
/// every normal by a random angle whose mean is `noise_deg`.
pub fn synth_observation(
    subject: &SyntheticSubject,
    pose: &Pose,
    pose_error: &[(usize, Vec3)],
    noise_deg: f64,
    resolution: usize,
    plane: &ImagePlane,
    rng: &mut impl Rng,
) -> Result<Observation> {
    if !(noise_deg >= 0.0) {
        return Err(contract("noise level must be nonnegative"));
    }
    let body = subject.body();
    let canonical_mesh = subject.canonical_mesh(pose, resolution)?;
    let weights = body.weights_for(&canonical_mesh.vertices);
    let posed_mesh = pose_mesh(&body.transforms(pose)?, &canonical_mesh, &weights)?;
    let mut normals = ortho_render_normals(&posed_mesh, plane, View::Front);
    if noise_deg > 0.0 {
        add_angular_noise(&mut normals, noise_deg.to_radians(), rng);
    }
    let mut estimated_pose = pose.clone();
    for (j, delta) in pose_error {
        if *j >= body.joint_count() {
            return Err(contract("pose error names a joint out of range"));
        }
        estimated_pose = estimated_pose.perturbed(*j, delta);
    }
    estimated_pose.validate(body.joint_count())?;
    Ok(Observation { normals, plane: *plane, true_pose: pose.clone(), estimated_pose, posed_mesh, canonical_mesh })
}

/// Rotates each valid normal about a uniformly random tangent axis by a
/// Rayleigh-distributed angle with mean `mean_angle` (radians).
pub fn add_angular_noise(map: &mut NormalMap, mean_angle: f64, rng: &mut impl Rng) {
    let scale = mean_angle / (std::f64::consts::PI / 2.0).sqrt();
    for row in 0..map.height() {
        for col in 0..map.width() {
            let Some(n) = map.get(col, row) else { continue };
            let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            let t1 = n.cross(&helper).normalize();
            let t2 = n.cross(&t1);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let u: f64 = rng.random();
            let angle = scale * (-2.0 * (1.0 - u).ln()).sqrt();
            let axis = t1 * phi.cos() + t2 * phi.sin();
            map.set(col, row, Some(rodrigues(&(axis * angle)).apply(&n)));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bodymodel::canonicalize_normal_map;
    use crate::synthcorpus::SubjectParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn subject() -> SyntheticSubject {
        SyntheticSubject::new(ArticulatedBody::toy(64).unwrap(), SubjectParams::toy_static()).unwrap()
    }

    #[test]
    fn clean_observation_is_the_plain_render() {
        let s = subject();
        let mut pose = s.body().rest_pose();
        pose.set_joint(s.body().joint_index("r_elbow").unwrap(), Vec3::new(0.0, 0.0, -0.6));
        let plane = observation_plane(96);
        let obs = synth_observation(&s, &pose, &[], 0.0, 64, &plane, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(obs.normals, ortho_render_normals(&obs.posed_mesh, &plane, View::Front));
        assert_eq!(obs.estimated_pose, pose);
        assert!(obs.normals.check_invariants());
    }

    #[test]
    fn noise_mean_matches_sigma() {
        let s = subject();
        let plane = observation_plane(128);
        let pose = s.body().rest_pose();
        let clean = synth_observation(&s, &pose, &[], 0.0, 64, &plane, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let noisy = synth_observation(&s, &pose, &[], 5.0, 64, &plane, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mean = noisy.normals.mean_angle_to(&clean.normals).unwrap().to_degrees();
        assert!((mean - 5.0).abs() < 1.0, "mean deviation {mean}");
        assert!(noisy.normals.check_invariants());
    }

    #[test]
    fn forearm_error_rotates_canonical_normals() {
        let s = subject();
        let body = s.body();
        let elbow = body.joint_index("l_elbow").unwrap();
        let pose = body.rest_pose();
        let swing = out_of_plane_swing(body, elbow, 20.0).unwrap();
        let plane = observation_plane(256);
        let obs = synth_observation(&s, &pose, &[(elbow, swing)], 0.0, 96, &plane, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!((obs.estimated_pose.angle(elbow) - 20f64.to_radians()).abs() < 1e-12);
        let avatar = &obs.canonical_mesh;
        let w = body.weights_for(&avatar.vertices);
        let canon = ImagePlane::canonical(128, 256);
        let out = canonicalize_normal_map(body, &obs.estimated_pose, avatar, &w, &obs.normals, &plane, &canon).unwrap();
        let normals = avatar.vertex_normals();
        let mut angles: Vec<f64> = out
            .fetched
            .iter()
            .enumerate()
            .filter(|(vi, f)| f.is_some() && w.row(*vi)[elbow] > 0.99 && avatar.vertices[*vi].y < 0.1)
            .map(|(vi, f)| f.unwrap().angle(&normals[vi]).to_degrees())
            .collect();
        assert!(angles.len() > 10);
        angles.sort_by(f64::total_cmp);
        let median = angles[angles.len() / 2];
        assert!((median - 20.0).abs() < 6.0, "median {median}");
    }
}
