use std::collections::HashMap;

use super::skeleton::{falloff_weights, Affine, BodyDef, Capsule, CapsuleDef, JointDef, Pose, SkinWeights};
use crate::error::{contract, Error, Result};
use crate::geomath::{marching_cubes, rodrigues, PointIndex, ScalarGrid, TriMesh, Vec3};

/// Skeleton, capsule-union rest surface and per-vertex skinning weights.
#[derive(Clone, Debug)]
pub struct ArticulatedBody {
    names: Vec<String>,
    parents: Vec<Option<usize>>,
    rest: Vec<Vec3>,
    capsules: Vec<Capsule>,
    falloff: f64,
    mesh: TriMesh,
    weights: SkinWeights,
    vertex_index: PointIndex,
}

/// Toy humanoid: a trunk column, neck, head and two two-segment arms.
pub fn toy_body_def() -> BodyDef {
    let joint = |name: &str, parent: Option<&str>, offset: [f64; 3]| JointDef { name: name.into(), parent: parent.map(Into::into), offset };
    let (s, c) = 25f64.to_radians().sin_cos();
    let (upper, fore) = (0.26, 0.25);
    let shoulder = [0.19, 0.42, 0.0];
    let elbow = [shoulder[0] + upper * s, shoulder[1] - upper * c, 0.0];
    let wrist = [elbow[0] + fore * s, elbow[1] - fore * c, 0.0];
    let mirror = |p: [f64; 3]| [-p[0], p[1], p[2]];
    let cap = |joint: &str, a: [f64; 3], b: [f64; 3], radius: f64| CapsuleDef { joint: joint.into(), a, b, radius };
    let rel = |p: [f64; 3], q: [f64; 3]| [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
    BodyDef {
        falloff: 0.05,
        joints: vec![
            joint("root", None, [0.0, 0.0, 0.0]),
            joint("spine", Some("root"), [0.0, 0.0, 0.0]),
            joint("neck", Some("spine"), [0.0, 0.45, 0.0]),
            joint("head", Some("neck"), [0.0, 0.07, 0.0]),
            joint("l_shoulder", Some("spine"), shoulder),
            joint("l_elbow", Some("l_shoulder"), rel(elbow, shoulder)),
            joint("r_shoulder", Some("spine"), mirror(shoulder)),
            joint("r_elbow", Some("r_shoulder"), rel(mirror(elbow), mirror(shoulder))),
        ],
        capsules: vec![
            cap("root", [0.0, -0.85, 0.0], [0.0, 0.0, 0.0], 0.14),
            cap("spine", [0.0, 0.0, 0.0], [0.0, 0.45, 0.0], 0.14),
            cap("neck", [0.0, 0.45, 0.0], [0.0, 0.52, 0.0], 0.05),
            cap("head", [0.0, 0.58, 0.0], [0.0, 0.62, 0.0], 0.1),
            cap("l_shoulder", [0.1, 0.42, 0.0], shoulder, 0.045),
            cap("l_shoulder", shoulder, elbow, 0.045),
            cap("l_elbow", elbow, wrist, 0.045),
            cap("r_shoulder", mirror([0.1, 0.42, 0.0]), mirror(shoulder), 0.045),
            cap("r_shoulder", mirror(shoulder), mirror(elbow), 0.045),
            cap("r_elbow", mirror(elbow), mirror(wrist), 0.045),
        ],
    }
}

impl ArticulatedBody {
    /// Builds the body; the rest surface is extracted from the capsule union
    /// on the canonical volume at `resolution` nodes per axis.
    pub fn from_def(def: &BodyDef, resolution: usize) -> Result<Self> {
        if !(def.falloff > 0.0) {
            return Err(contract("skinning falloff must be positive"));
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut names = Vec::new();
        let mut parents = Vec::new();
        let mut rest: Vec<Vec3> = Vec::new();
        for (j, jd) in def.joints.iter().enumerate() {
            if index.insert(jd.name.as_str(), j).is_some() {
                return Err(contract(format!("duplicate joint name {}", jd.name)));
            }
            let parent = match &jd.parent {
                None => None,
                Some(p) => {
                    Some(*index.get(p.as_str()).ok_or_else(|| contract(format!("joint {} names unknown or later parent {p}", jd.name)))?)
                }
            };
            let offset = Vec3::from(jd.offset);
            rest.push(parent.map_or(offset, |p| rest[p] + offset));
            names.push(jd.name.clone());
            parents.push(parent);
        }
        if parents.iter().filter(|p| p.is_none()).count() != 1 {
            return Err(contract("body needs exactly one root joint"));
        }
        let mut capsules = Vec::new();
        for cd in &def.capsules {
            let joint = *index.get(cd.joint.as_str()).ok_or_else(|| contract(format!("capsule names unknown joint {}", cd.joint)))?;
            if !(cd.radius > 0.0) {
                return Err(contract("capsule radius must be positive"));
            }
            capsules.push(Capsule { joint, a: Vec3::from(cd.a), b: Vec3::from(cd.b), radius: cd.radius });
        }
        if capsules.is_empty() {
            return Err(contract("body has no capsules"));
        }
        let mut grid = ScalarGrid::canonical(resolution, 1.0)?;
        grid.fill_active(1.0, 4096, |pts| pts.iter().map(|p| capsules.iter().map(|c| c.sdf(p)).fold(f64::INFINITY, f64::min)).collect());
        let mesh = marching_cubes(&grid, 0.0)?;
        if mesh.is_empty() {
            return Err(Error::EmptySurface);
        }
        let mesh = mesh.with_computed_normals();
        let j = names.len();
        let mut weights = SkinWeights::new(j);
        let mut row = vec![0.0; j];
        for v in &mesh.vertices {
            falloff_weights(&capsules, j, def.falloff, v, &mut row);
            weights.push(&row);
        }
        let vertex_index = PointIndex::new(&mesh.vertices, 0.05);
        Ok(Self { names, parents, rest, capsules, falloff: def.falloff, mesh, weights, vertex_index })
    }

    pub fn toy(resolution: usize) -> Result<Self> {
        Self::from_def(&toy_body_def(), resolution)
    }

    #[inline]
    pub fn joint_count(&self) -> usize {
        self.names.len()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn joint_names(&self) -> &[String] {
        &self.names
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parents[j]
    }

    pub fn rest_position(&self, j: usize) -> Vec3 {
        self.rest[j]
    }

    pub fn capsules(&self) -> &[Capsule] {
        &self.capsules
    }

    pub fn falloff(&self) -> f64 {
        self.falloff
    }

    /// Rest surface mesh (outward normals).
    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    /// Skinning weights of the rest mesh vertices.
    pub fn vertex_weights(&self) -> &SkinWeights {
        &self.weights
    }

    pub fn rest_pose(&self) -> Pose {
        Pose::rest(self.joint_count())
    }

    /// Signed distance to the rest capsule union.
    pub fn sdf(&self, p: &Vec3) -> f64 {
        self.capsules.iter().map(|c| c.sdf(p)).fold(f64::INFINITY, f64::min)
    }

    /// Per-joint transforms relative to rest: each joint rotates about its
    /// rest position, composed down the tree, then the root translation.
    pub fn transforms(&self, pose: &Pose) -> Result<Vec<Affine>> {
        pose.validate(self.joint_count())?;
        let mut out: Vec<Affine> = Vec::with_capacity(self.joint_count());
        for j in 0..self.joint_count() {
            let local = Affine::rotation_about(*rodrigues(&pose.joint(j)).matrix(), &self.rest[j]);
            let g = match self.parents[j] {
                Some(p) => out[p].compose(&local),
                None => Affine::translation(Vec3::from(pose.translation)).compose(&local),
            };
            out.push(g);
        }
        Ok(out)
    }

    /// Analytic weights of a canonical-space point.
    pub fn weights_at(&self, p: &Vec3, out: &mut [f64]) {
        falloff_weights(&self.capsules, self.joint_count(), self.falloff, p, out);
    }

    pub fn weights_for(&self, points: &[Vec3]) -> SkinWeights {
        let mut w = SkinWeights::new(self.joint_count());
        let mut row = vec![0.0; self.joint_count()];
        for p in points {
            self.weights_at(p, &mut row);
            w.push(&row);
        }
        w
    }

    /// Analytic weights of a posed-space point, from the posed capsules.
    pub fn posed_weights_for(&self, transforms: &[Affine], points: &[Vec3]) -> SkinWeights {
        let posed: Vec<Capsule> = self.capsules.iter().map(|c| c.transformed(&transforms[c.joint])).collect();
        let mut w = SkinWeights::new(self.joint_count());
        let mut row = vec![0.0; self.joint_count()];
        for p in points {
            falloff_weights(&posed, self.joint_count(), self.falloff, p, &mut row);
            w.push(&row);
        }
        w
    }

    /// Weights copied from the nearest rest mesh vertex.
    pub fn transfer_weights(&self, points: &[Vec3]) -> SkinWeights {
        let mut w = SkinWeights::new(self.joint_count());
        for p in points {
            let (i, _) = self.vertex_index.nearest(p).expect("rest mesh is nonempty");
            w.push(self.weights.row(i));
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_body_builds() {
        let b = ArticulatedBody::toy(96).unwrap();
        assert_eq!(b.joint_count(), 8);
        assert!(b.mesh().triangles.len() > 1000);
        assert_eq!(b.mesh().boundary_edge_count(), 0);
        assert!(b.mesh().signed_volume() > 0.0);
        for i in 0..b.vertex_weights().len() {
            let r = b.vertex_weights().row(i);
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(r.iter().all(|w| *w >= 0.0));
        }
        let (lo, hi) = b.mesh().bounds().unwrap();
        assert!(lo.x > -0.5 && hi.x < 0.5 && lo.y > -1.0 && hi.y < 1.0);
    }

    #[test]
    fn rejects_bad_definitions() {
        let mut d = toy_body_def();
        d.joints[2].parent = Some("nope".into());
        assert!(ArticulatedBody::from_def(&d, 32).is_err());
        let mut d = toy_body_def();
        d.joints[1].parent = None;
        assert!(ArticulatedBody::from_def(&d, 32).is_err());
        let mut d = toy_body_def();
        d.capsules[0].radius = 0.0;
        assert!(ArticulatedBody::from_def(&d, 32).is_err());
    }

    #[test]
    fn rest_transforms_are_identity() {
        let b = ArticulatedBody::toy(32).unwrap();
        for t in b.transforms(&b.rest_pose()).unwrap() {
            assert_eq!(t, Affine::identity());
        }
    }
}
