use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::geomath::{rodrigues, Mat3, Vec3};

/// One joint of the kinematic tree. `offset` is the rest position relative
/// to the parent joint (absolute for the root).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDef {
    pub name: String,
    #[serde(default)]
    pub parent: Option<String>,
    pub offset: [f64; 3],
}

/// A capsule of the rest surface, rigidly attached to `joint`.
/// Endpoints are in canonical (rest) coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapsuleDef {
    pub joint: String,
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub radius: f64,
}

/// Body definition as read from a key-value document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyDef {
    /// Skinning weight falloff distance (meters).
    pub falloff: f64,
    pub joints: Vec<JointDef>,
    pub capsules: Vec<CapsuleDef>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Capsule {
    pub joint: usize,
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

impl Capsule {
    /// Parameter along the axis of the closest axis point, in `[0, 1]`.
    #[inline]
    pub fn axis_param(&self, p: &Vec3) -> f64 {
        let ab = self.b - self.a;
        let len2 = ab.norm_squared();
        if len2 == 0.0 {
            0.0
        } else {
            ((p - self.a).dot(&ab) / len2).clamp(0.0, 1.0)
        }
    }

    #[inline]
    pub fn axis_distance(&self, p: &Vec3) -> f64 {
        let t = self.axis_param(p);
        (p - (self.a + (self.b - self.a) * t)).norm()
    }

    #[inline]
    pub fn sdf(&self, p: &Vec3) -> f64 {
        self.axis_distance(p) - self.radius
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }

    pub fn transformed(&self, t: &Affine) -> Capsule {
        Capsule { a: t.apply(&self.a), b: t.apply(&self.b), ..*self }
    }
}

/// `x -> m x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub m: Mat3,
    pub t: Vec3,
}

impl Affine {
    pub fn identity() -> Self {
        Self { m: Mat3::identity(), t: Vec3::zeros() }
    }

    pub fn translation(t: Vec3) -> Self {
        Self { m: Mat3::identity(), t }
    }

    /// Rotation `r` about the point `center`.
    pub fn rotation_about(r: Mat3, center: &Vec3) -> Self {
        Self { m: r, t: center - r * center }
    }

    #[inline]
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.m * x + self.t
    }

    pub fn compose(&self, inner: &Affine) -> Affine {
        Affine { m: self.m * inner.m, t: self.m * inner.t + self.t }
    }

    /// Weighted sum of transforms (linear blend).
    pub fn blend(transforms: &[Affine], weights: &[f64]) -> Affine {
        let mut out = Affine { m: Mat3::zeros(), t: Vec3::zeros() };
        for (tr, &w) in transforms.iter().zip(weights) {
            if w != 0.0 {
                out.m += tr.m * w;
                out.t += tr.t * w;
            }
        }
        out
    }
}

/// Per-joint axis-angle rotations plus a root translation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub joints: Vec<[f64; 3]>,
    pub translation: [f64; 3],
}

impl Pose {
    pub fn rest(joints: usize) -> Self {
        Self { joints: vec![[0.0; 3]; joints], translation: [0.0; 3] }
    }

    pub fn joint(&self, j: usize) -> Vec3 {
        Vec3::from(self.joints[j])
    }

    pub fn set_joint(&mut self, j: usize, w: Vec3) {
        self.joints[j] = [w.x, w.y, w.z];
    }

    pub fn validate(&self, joints: usize) -> Result<()> {
        if self.joints.len() != joints {
            return Err(contract(format!("pose has {} joints, body has {joints}", self.joints.len())));
        }
        let finite = self.joints.iter().flatten().chain(&self.translation).all(|v| v.is_finite());
        if !finite {
            return Err(contract("pose has non-finite entries"));
        }
        if self.joints.iter().any(|w| Vec3::from(*w).norm() >= std::f64::consts::PI) {
            return Err(contract("joint rotation angle must be below pi"));
        }
        Ok(())
    }

    /// Flattened joint rotations (the pose vector used for conditioning).
    pub fn vector(&self) -> Vec<f64> {
        self.joints.iter().flatten().copied().collect()
    }

    /// Angle of joint `j`'s rotation.
    pub fn angle(&self, j: usize) -> f64 {
        self.joint(j).norm()
    }

    /// Composes an extra local rotation onto joint `j`: `R_j <- R_j * exp(delta)`.
    pub fn perturbed(&self, j: usize, delta: &Vec3) -> Pose {
        let r = rodrigues(&self.joint(j)).compose(&rodrigues(delta));
        let w = crate::geomath::rod_inv(&r).unwrap_or_else(|_| self.joint(j) + delta);
        let mut out = self.clone();
        out.set_joint(j, w);
        out
    }
}

/// Flat row-per-point joint weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinWeights {
    joints: usize,
    data: Vec<f64>,
}

impl SkinWeights {
    pub fn new(joints: usize) -> Self {
        Self { joints, data: Vec::new() }
    }

    pub fn from_rows(joints: usize, data: Vec<f64>) -> Result<Self> {
        if joints == 0 || data.len() % joints != 0 {
            return Err(contract("weight buffer is not a whole number of rows"));
        }
        Ok(Self { joints, data })
    }

    #[inline]
    pub fn joints(&self) -> usize {
        self.joints
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.joints
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.joints..(i + 1) * self.joints]
    }

    pub fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.joints);
        self.data.extend_from_slice(row);
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }
}

/// Weights from capsule distances: the closest joint gets 1 before
/// normalisation and others fade quadratically over `falloff`.
pub fn falloff_weights(capsules: &[Capsule], joints: usize, falloff: f64, p: &Vec3, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = f64::INFINITY);
    for c in capsules {
        let d = c.sdf(p);
        if d < out[c.joint] {
            out[c.joint] = d;
        }
    }
    let dmin = out.iter().copied().fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for v in out.iter_mut().take(joints) {
        let s = (1.0 - (*v - dmin) / falloff).max(0.0);
        *v = if v.is_finite() { s * s } else { 0.0 };
        sum += *v;
    }
    for v in out.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn falloff_weights_are_normalised() {
        let caps = [
            Capsule { joint: 0, a: Vec3::zeros(), b: Vec3::y(), radius: 0.1 },
            Capsule { joint: 2, a: Vec3::y(), b: Vec3::new(0.0, 2.0, 0.0), radius: 0.1 },
        ];
        let mut w = [0.0; 3];
        for y in [-0.5, 0.5, 0.99, 1.0, 1.01, 1.5, 3.0] {
            falloff_weights(&caps, 3, 0.05, &Vec3::new(0.2, y, 0.0), &mut w);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|v| *v >= 0.0));
            assert_eq!(w[1], 0.0);
        }
        falloff_weights(&caps, 3, 0.05, &Vec3::new(0.2, 0.5, 0.0), &mut w);
        assert_eq!(w, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn blend_of_identity_and_translation() {
        let t = Vec3::new(0.4, -0.2, 1.0);
        let b = Affine::blend(&[Affine::identity(), Affine::translation(t)], &[0.5, 0.5]);
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert!((b.apply(&p) - (p + t / 2.0)).norm() < 1e-15);
    }

    #[test]
    fn pose_validation() {
        let mut p = Pose::rest(2);
        assert!(p.validate(2).is_ok());
        assert!(p.validate(3).is_err());
        p.joints[1] = [4.0, 0.0, 0.0];
        assert!(p.validate(2).is_err());
    }
}
