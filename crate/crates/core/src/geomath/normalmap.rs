use serde::{Deserialize, Serialize};

use super::rotation::Vec3;
use crate::error::{contract, Result};

/// Which side of the body an orthographic camera looks at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    /// Camera on +z looking down -z.
    Front,
    /// Camera on -z looking down +z; image x is mirrored.
    Back,
}

/// Orthographic image plane: world window `[x_min, x_max] x [y_min, y_max]`
/// sampled at `width x height` pixels. Row 0 is the top (largest y).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagePlane {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub width: usize,
    pub height: usize,
}

impl ImagePlane {
    /// The 1 m x 2 m canonical window centred on the body.
    pub fn canonical(width: usize, height: usize) -> Self {
        Self { x_min: -0.5, x_max: 0.5, y_min: -1.0, y_max: 1.0, width, height }
    }

    #[inline]
    pub fn pixel_size(&self) -> (f64, f64) {
        ((self.x_max - self.x_min) / self.width as f64, (self.y_max - self.y_min) / self.height as f64)
    }

    /// Continuous pixel coordinates (pixel centres at integers) of a world point.
    #[inline]
    pub fn project(&self, p: &Vec3, view: View) -> (f64, f64) {
        let (dx, dy) = self.pixel_size();
        let col = match view {
            View::Front => (p.x - self.x_min) / dx - 0.5,
            View::Back => (self.x_max - p.x) / dx - 0.5,
        };
        let row = (self.y_max - p.y) / dy - 0.5;
        (col, row)
    }

    /// World (x, y) of a continuous pixel coordinate.
    #[inline]
    pub fn unproject(&self, col: f64, row: f64, view: View) -> (f64, f64) {
        let (dx, dy) = self.pixel_size();
        let x = match view {
            View::Front => self.x_min + (col + 0.5) * dx,
            View::Back => self.x_max - (col + 0.5) * dx,
        };
        (x, self.y_max - (row + 0.5) * dy)
    }

    /// Nearest pixel containing a point, if inside the window.
    pub fn pixel_of(&self, p: &Vec3, view: View) -> Option<(usize, usize)> {
        let (c, r) = self.project(p, view);
        let (c, r) = (c.round(), r.round());
        if c < 0.0 || r < 0.0 || c >= self.width as f64 || r >= self.height as f64 {
            None
        } else {
            Some((c as usize, r as usize))
        }
    }
}

/// Grid of unit normals with a validity mask. Invalid pixels hold zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalMap {
    width: usize,
    height: usize,
    normals: Vec<Vec3>,
    mask: Vec<bool>,
}

impl NormalMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self { width, height, normals: vec![Vec3::zeros(); width * height], mask: vec![false; width * height] }
    }

    /// Builds a map, normalising valid entries and zeroing invalid ones.
    /// Entries already unit to within 1e-12 are kept bit-exact.
    pub fn from_parts(width: usize, height: usize, normals: Vec<Vec3>, mask: Vec<bool>) -> Result<Self> {
        if normals.len() != width * height || mask.len() != width * height {
            return Err(contract("normal map buffers do not match its size"));
        }
        let mut m = Self { width, height, normals, mask };
        for i in 0..m.normals.len() {
            let n = m.normals[i];
            let len = n.norm();
            if m.mask[i] && len > 1e-12 && len.is_finite() {
                if (len - 1.0).abs() > 1e-12 {
                    m.normals[i] = n / len;
                }
            } else {
                m.mask[i] = false;
                m.normals[i] = Vec3::zeros();
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    #[inline]
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> Option<Vec3> {
        let i = self.index(col, row);
        self.mask[i].then(|| self.normals[i])
    }

    /// Sets a pixel; the normal is normalised, `None` invalidates the pixel.
    pub fn set(&mut self, col: usize, row: usize, n: Option<Vec3>) {
        let i = self.index(col, row);
        match n {
            Some(v) if v.norm() > 1e-12 && v.norm().is_finite() => {
                self.normals[i] = v.normalize();
                self.mask[i] = true;
            }
            _ => {
                self.normals[i] = Vec3::zeros();
                self.mask[i] = false;
            }
        }
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn same_size(&self, other: &NormalMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Largest `| |n| - 1 |` over valid pixels, and whether invalid pixels are zero.
    pub fn check_invariants(&self) -> bool {
        self.normals.iter().zip(&self.mask).all(|(n, m)| if *m { (n.norm() - 1.0).abs() < 1e-6 } else { *n == Vec3::zeros() })
    }

    /// Mirrors the map left-right (converts between back-view and front-view pixel layouts).
    pub fn mirrored(&self) -> NormalMap {
        let mut out = NormalMap::invalid(self.width, self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                let src = self.index(self.width - 1 - c, r);
                let dst = out.index(c, r);
                out.normals[dst] = self.normals[src];
                out.mask[dst] = self.mask[src];
            }
        }
        out
    }

    /// Mean angle (radians) between two maps over pixels valid in both.
    pub fn mean_angle_to(&self, other: &NormalMap) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for i in 0..self.normals.len() {
            if self.mask[i] && other.mask[i] {
                sum += angle_between(&self.normals[i], &other.normals[i]);
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

#[inline]
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn project_round_trip() {
        let plane = ImagePlane::canonical(64, 128);
        for view in [View::Front, View::Back] {
            let p = Vec3::new(0.123, -0.456, 0.0);
            let (c, r) = plane.project(&p, view);
            let (x, y) = plane.unproject(c, r, view);
            assert!((x - p.x).abs() < 1e-12 && (y - p.y).abs() < 1e-12);
        }
        let (c, _) = plane.project(&Vec3::new(0.4, 0.0, 0.0), View::Back);
        let (cf, _) = plane.project(&Vec3::new(-0.4, 0.0, 0.0), View::Front);
        assert!((c - cf).abs() < 1e-12);
    }

    #[test]
    fn from_parts_normalises_and_masks() {
        let m = NormalMap::from_parts(2, 1, vec![Vec3::new(0.0, 0.0, 2.0), Vec3::new(1.0, 1.0, 1.0)], vec![true, false]).unwrap();
        assert_eq!(m.get(0, 0), Some(Vec3::z()));
        assert_eq!(m.get(1, 0), None);
        assert!(m.check_invariants());
    }
}
