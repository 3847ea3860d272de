use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Largest rotation angle accepted by [`rod_inv`].
pub const MAX_LOG_ANGLE: f64 = std::f64::consts::PI - 1e-6;

/// A proper rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rot3(Mat3);

impl Rot3 {
    pub fn identity() -> Self {
        Rot3(Mat3::identity())
    }

    /// Wraps a matrix that is already orthonormal with determinant +1.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rot3(m)
    }

    /// Nearest rotation in the Frobenius sense (polar factor).
    pub fn project(m: &Mat3) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        let mut d = Mat3::identity();
        if (u * vt).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Rot3(u * d * vt)
    }

    #[inline]
    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rot3(self.0.transpose())
    }

    pub fn compose(&self, other: &Rot3) -> Self {
        Rot3(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Max deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.0.transpose() * self.0 - Mat3::identity()).abs().max();
        e.max((self.0.determinant() - 1.0).abs())
    }
}

#[inline]
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map so(3) -> SO(3).
pub fn rodrigues(omega: &Vec3) -> Rot3 {
    let theta2 = omega.norm_squared();
    let k = skew(omega);
    let (a, b) = if theta2 < 1e-12 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rot3(Mat3::identity() + k * a + k * k * b)
}

/// Logarithm map SO(3) -> so(3) (axis times angle).
pub fn rod_inv(r: &Rot3) -> Result<Vec3> {
    let m = r.matrix();
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let w = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let sin = 0.5 * w.norm();
    let theta = sin.atan2(cos);
    if theta > MAX_LOG_ANGLE {
        return Err(Error::RotationAmbiguity(theta));
    }
    if theta < 1e-8 {
        // first-order: w/2 = theta * axis
        return Ok(w * 0.5 * (1.0 + theta * theta / 6.0));
    }
    Ok(w * (theta / (2.0 * sin)))
}

/// Geodesic distance on SO(3): the angle of `aᵀ b`.
pub fn geodesic_angle(a: &Rot3, b: &Rot3) -> f64 {
    let m = a.matrix().transpose() * b.matrix();
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let w = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    (0.5 * w.norm()).atan2(cos)
}

/// Inverse of the left Jacobian of SO(3) at `phi`: the derivative of
/// `rod_inv(rodrigues(delta) * rodrigues(phi))` w.r.t. `delta` at zero.
pub fn left_jacobian_inv(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    let c = if theta2 < 1e-10 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        let theta = theta2.sqrt();
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Mat3::identity() - k * 0.5 + k * k * c
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_omega(rng: &mut ChaCha8Rng, max_angle: f64) -> Vec3 {
        loop {
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if v.norm() > 1e-3 && v.norm() <= 1.0 {
                return v.normalize() * rng.random_range(0.0..max_angle);
            }
        }
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(*rodrigues(&Vec3::zeros()).matrix(), Mat3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = rodrigues(&Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let v = r.apply(&Vec3::x());
        assert!((v - Vec3::y()).norm() < 1e-15);
    }

    #[test]
    fn round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let w = random_omega(&mut rng, 3.0);
            let r = rodrigues(&w);
            assert!(r.orthonormality_error() < 1e-9);
            let back = rod_inv(&r).unwrap();
            assert!((back - w).norm() < 1e-9, "{w:?} -> {back:?}");
        }
    }

    #[test]
    fn half_turn_is_ambiguous() {
        let r = rodrigues(&Vec3::new(std::f64::consts::PI, 0.0, 0.0));
        assert!(matches!(rod_inv(&r), Err(Error::RotationAmbiguity(_))));
    }

    #[test]
    fn left_jacobian_inverse_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let phi = random_omega(&mut rng, 2.5);
            let r = rodrigues(&phi);
            let jinv = left_jacobian_inv(&phi);
            let h = 1e-6;
            for a in 0..3 {
                let mut d = Vec3::zeros();
                d[a] = h;
                let p = rod_inv(&rodrigues(&d).compose(&r)).unwrap();
                let m = rod_inv(&rodrigues(&-d).compose(&r)).unwrap();
                let col = (p - m) / (2.0 * h);
                assert!((col - jinv.column(a)).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn projection_recovers_rotation() {
        let r = rodrigues(&Vec3::new(0.3, -0.2, 0.9));
        let noisy = r.matrix() * 1.3;
        let p = Rot3::project(&noisy);
        assert!((p.matrix() - r.matrix()).abs().max() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn geodesic_of_exp_is_angle(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
            let w = Vec3::new(x, y, z);
            let a = geodesic_angle(&Rot3::identity(), &rodrigues(&w));
            proptest::prop_assert!((a - w.norm()).abs() < 1e-9);
        }
    }
}
