use serde::{Deserialize, Serialize};

use crate::bodymodel::{ArticulatedBody, Pose};
use crate::error::{contract, Result};
use crate::geomath::{marching_cubes, ScalarGrid, TriMesh, Vec3};

/// Ring wrinkles on the capsules owned by `parts`, with amplitude
/// `base + slope * |angle(driver)|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WrinkleTerm {
    pub parts: Vec<String>,
    pub driver: String,
    pub base: f64,
    pub slope: f64,
}

/// Horizontal colour bands over canonical height, shifted by
/// `slide * dot(rotation vector of driver, axis)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StripeParams {
    pub period: f64,
    pub slide: f64,
    pub driver: String,
    pub axis: [f64; 3],
    pub colors: [[f64; 3]; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectParams {
    /// Wrinkle wavelength along each bone (meters).
    pub wavelength: f64,
    pub wrinkles: Vec<WrinkleTerm>,
    pub stripes: StripeParams,
    pub seed: u64,
}

impl SubjectParams {
    fn toy(arm_slope: f64, trunk_slope: f64, slide: f64) -> Self {
        let term = |parts: &[&str], driver: &str, slope: f64| WrinkleTerm {
            parts: parts.iter().map(|s| s.to_string()).collect(),
            driver: driver.into(),
            base: 0.0,
            slope,
        };
        Self {
            wavelength: 0.08,
            wrinkles: vec![
                term(&["l_shoulder", "l_elbow"], "l_elbow", arm_slope),
                term(&["r_shoulder", "r_elbow"], "r_elbow", arm_slope),
                term(&["root", "spine"], "spine", trunk_slope),
            ],
            stripes: StripeParams {
                period: 0.15,
                slide,
                driver: "spine".into(),
                axis: [1.0, 0.0, 0.0],
                colors: [[0.9, 0.8, 0.2], [0.1, 0.2, 0.7]],
            },
            seed: 0,
        }
    }

    /// Pose-dependent wrinkles on arms and trunk plus sliding stripes.
    pub fn toy_wrinkled() -> Self {
        Self::toy(0.008, 0.01, 0.1)
    }

    /// No wrinkles and no slide: canonical geometry and colour ignore the pose.
    pub fn toy_static() -> Self {
        Self::toy(0.0, 0.0, 0.0)
    }

    /// Pose-independent geometry with stripes that slide with the spine.
    pub fn toy_sliding() -> Self {
        Self::toy(0.0, 0.0, 0.1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength > 0.0) {
            return Err(contract("wrinkle wavelength must be positive"));
        }
        if !(self.stripes.period > 0.0) {
            return Err(contract("stripe period must be positive"));
        }
        if !self.stripes.slide.is_finite() {
            return Err(contract("stripe slide must be finite"));
        }
        for w in &self.wrinkles {
            if !(w.base >= 0.0 && w.slope >= 0.0) {
                return Err(contract("wrinkle amplitude terms must be nonnegative"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Wrinkle {
    driver: usize,
    base: f64,
    slope: f64,
}

/// Procedural subject: the body's capsule union displaced by pose-driven
/// wrinkles, coloured by sliding stripes.
#[derive(Clone, Debug)]
pub struct SyntheticSubject {
    body: ArticulatedBody,
    params: SubjectParams,
    /// Per capsule.
    wrinkle: Vec<Option<Wrinkle>>,
    stripe_driver: usize,
    stripe_axis: Vec3,
}

impl SyntheticSubject {
    pub fn new(body: ArticulatedBody, params: SubjectParams) -> Result<Self> {
        params.validate()?;
        let joint = |name: &str| body.joint_index(name).ok_or_else(|| contract(format!("subject names unknown joint {name}")));
        let mut wrinkle = vec![None; body.capsules().len()];
        for term in &params.wrinkles {
            let driver = joint(&term.driver)?;
            for part in &term.parts {
                let j = joint(part)?;
                for (c, cap) in body.capsules().iter().enumerate() {
                    if cap.joint == j {
                        wrinkle[c] = Some(Wrinkle { driver, base: term.base, slope: term.slope });
                    }
                }
            }
        }
        let axis = Vec3::from(params.stripes.axis);
        if !(axis.norm() > 0.0) {
            return Err(contract("stripe axis must be nonzero"));
        }
        Ok(Self { stripe_driver: joint(&params.stripes.driver)?, stripe_axis: axis.normalize(), body, params, wrinkle })
    }

    pub fn body(&self) -> &ArticulatedBody {
        &self.body
    }

    pub fn params(&self) -> &SubjectParams {
        &self.params
    }

    /// Wrinkle amplitude of capsule `c` at `pose` (0 for capsules without wrinkles).
    pub fn amplitude(&self, c: usize, pose: &Pose) -> f64 {
        self.wrinkle[c].map_or(0.0, |w| w.base + w.slope * pose.angle(w.driver))
    }

    /// Tangential stripe shift (meters along canonical y).
    pub fn slide(&self, pose: &Pose) -> f64 {
        self.params.stripes.slide * pose.joint(self.stripe_driver).dot(&self.stripe_axis)
    }

    /// Outward displacement of the canonical surface near `p`: each capsule's
    /// ring pattern blended with the same quadratic falloff as the skinning
    /// weights, so the field stays continuous across capsule junctions.
    pub fn displacement(&self, p: &Vec3, pose: &Pose) -> f64 {
        let caps = self.body.capsules();
        let falloff = self.body.falloff();
        let mut dmin = f64::INFINITY;
        for c in caps {
            dmin = dmin.min(c.sdf(p));
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (i, c) in caps.iter().enumerate() {
            let s = (1.0 - (c.sdf(p) - dmin) / falloff).max(0.0);
            let w = s * s;
            if w == 0.0 {
                continue;
            }
            den += w;
            let a = self.amplitude(i, pose);
            if a != 0.0 {
                let u = c.axis_param(p) * c.length();
                num += w * a * (std::f64::consts::TAU * u / self.params.wavelength).sin();
            }
        }
        num / den
    }

    /// Signed distance-like field of the canonical subject at `pose`
    /// (negative inside).
    pub fn sdf(&self, p: &Vec3, pose: &Pose) -> f64 {
        self.body.sdf(p) - self.displacement(p, pose)
    }

    /// 1 inside, 0 outside.
    pub fn occupancy(&self, p: &Vec3, pose: &Pose) -> f64 {
        if self.sdf(p, pose) < 0.0 {
            1.0
        } else {
            0.0
        }
    }

    /// Central-difference gradient of [`Self::sdf`].
    pub fn sdf_gradient(&self, p: &Vec3, pose: &Pose) -> Vec3 {
        let h = 1e-6;
        let mut g = Vec3::zeros();
        for k in 0..3 {
            let mut e = Vec3::zeros();
            e[k] = h;
            g[k] = (self.sdf(&(p + e), pose) - self.sdf(&(p - e), pose)) / (2.0 * h);
        }
        g
    }

    /// Canonical colour at `p`.
    pub fn color(&self, p: &Vec3, pose: &Pose) -> Vec3 {
        let s = &self.params.stripes;
        let phase = std::f64::consts::TAU * (p.y + self.slide(pose)) / s.period;
        let t = 0.5 + 0.5 * phase.sin();
        Vec3::from(s.colors[0]) * (1.0 - t) + Vec3::from(s.colors[1]) * t
    }

    /// Marching-cubes surface of the canonical subject on the canonical
    /// volume at `resolution` nodes per axis.
    pub fn canonical_mesh(&self, pose: &Pose, resolution: usize) -> Result<TriMesh> {
        let mut grid = ScalarGrid::canonical(resolution, 1.0)?;
        grid.fill_active(1.0, 4096, |pts| pts.iter().map(|p| self.sdf(p, pose)).collect());
        Ok(marching_cubes(&grid, 0.0)?.with_computed_normals())
    }

    /// Moves `p` onto the zero set by Newton steps along the gradient;
    /// `None` if it does not converge to within `1e-10`.
    pub fn project_to_surface(&self, p: &Vec3, pose: &Pose) -> Option<Vec3> {
        let mut x = *p;
        for _ in 0..20 {
            let f = self.sdf(&x, pose);
            if f.abs() < 1e-10 {
                return Some(x);
            }
            let g = self.sdf_gradient(&x, pose);
            let g2 = g.norm_squared();
            if !(g2 > 1e-8) {
                return None;
            }
            x -= g * (f / g2);
        }
        None
    }
}
