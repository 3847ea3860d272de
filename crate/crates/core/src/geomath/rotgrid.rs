use super::rotation::{Mat3, Rot3};
use crate::error::{contract, Result};

/// `G x G` rotations laid over a `width x height` pixel map.
///
/// Node `(gx, gy)` sits at pixel `(gx * (width-1)/(G-1), gy * (height-1)/(G-1))`.
/// The rotation at an arbitrary pixel is the bilinear blend of the four
/// surrounding nodes; the blend is a plain linear combination and is not
/// re-projected onto SO(3).
#[derive(Clone, Debug, PartialEq)]
pub struct RotationGrid {
    size: usize,
    width: usize,
    height: usize,
    cells: Vec<Rot3>,
}

impl RotationGrid {
    pub fn identity(size: usize, width: usize, height: usize) -> Result<Self> {
        if size < 2 {
            return Err(contract("rotation grid needs at least 2x2 nodes"));
        }
        if width < 2 || height < 2 {
            return Err(contract("rotation grid extent must be at least 2x2 pixels"));
        }
        Ok(Self { size, width, height, cells: vec![Rot3::identity(); size * size] })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn cells(&self) -> &[Rot3] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [Rot3] {
        &mut self.cells
    }

    #[inline]
    pub fn index(&self, gx: usize, gy: usize) -> usize {
        gy * self.size + gx
    }

    pub fn cell(&self, gx: usize, gy: usize) -> &Rot3 {
        &self.cells[self.index(gx, gy)]
    }

    /// Pixel position of a node.
    pub fn node_position(&self, gx: usize, gy: usize) -> (f64, f64) {
        let sx = (self.width - 1) as f64 / (self.size - 1) as f64;
        let sy = (self.height - 1) as f64 / (self.size - 1) as f64;
        (gx as f64 * sx, gy as f64 * sy)
    }

    /// Bilinear interpolation weights `w_i(p)` of the four nodes around pixel `p`.
    pub fn weights_at(&self, px: f64, py: f64) -> Result<[(usize, f64); 4]> {
        let maxx = (self.width - 1) as f64;
        let maxy = (self.height - 1) as f64;
        if !(0.0..=maxx).contains(&px) || !(0.0..=maxy).contains(&py) {
            return Err(contract(format!("pixel ({px}, {py}) outside rotation grid extent {}x{}", self.width, self.height)));
        }
        let g = (self.size - 1) as f64;
        let fx = px / maxx * g;
        let fy = py / maxy * g;
        let x0 = (fx.floor() as usize).min(self.size - 2);
        let y0 = (fy.floor() as usize).min(self.size - 2);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        Ok([
            (self.index(x0, y0), (1.0 - tx) * (1.0 - ty)),
            (self.index(x0 + 1, y0), tx * (1.0 - ty)),
            (self.index(x0, y0 + 1), (1.0 - tx) * ty),
            (self.index(x0 + 1, y0 + 1), tx * ty),
        ])
    }

    /// `R(p) = sum_i w_i(p) R_i`.
    pub fn rotation_at(&self, px: f64, py: f64) -> Result<Mat3> {
        let taps = self.weights_at(px, py)?;
        Ok(blend(&self.cells, &taps))
    }
}

#[inline]
pub(crate) fn blend(cells: &[Rot3], taps: &[(usize, f64); 4]) -> Mat3 {
    let mut m = Mat3::zeros();
    for &(i, w) in taps {
        if w != 0.0 {
            m += cells[i].matrix() * w;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geomath::rotation::{rodrigues, Vec3};

    #[test]
    fn node_returns_cell_exactly() {
        let mut g = RotationGrid::identity(4, 31, 21).unwrap();
        for (i, c) in g.cells_mut().iter_mut().enumerate() {
            *c = rodrigues(&Vec3::new(0.01 * i as f64, -0.02, 0.03 * i as f64));
        }
        for gy in 0..4 {
            for gx in 0..4 {
                let (px, py) = g.node_position(gx, gy);
                let m = g.rotation_at(px, py).unwrap();
                assert_eq!(m, *g.cell(gx, gy).matrix());
            }
        }
    }

    #[test]
    fn identity_everywhere() {
        let g = RotationGrid::identity(5, 16, 16).unwrap();
        for (px, py) in [(0.0, 0.0), (3.3, 7.9), (15.0, 15.0), (8.1, 0.2)] {
            assert!((g.rotation_at(px, py).unwrap() - Mat3::identity()).abs().max() < 1e-15);
        }
    }

    #[test]
    fn midpoint_is_entrywise_mean() {
        let mut g = RotationGrid::identity(2, 11, 11).unwrap();
        let r = rodrigues(&Vec3::new(0.0, 0.0, 0.2));
        g.cells_mut()[1] = r;
        g.cells_mut()[3] = r;
        let m = g.rotation_at(5.0, 3.0).unwrap();
        let want = (Mat3::identity() + r.matrix()) * 0.5;
        assert!((m - want).abs().max() < 1e-15);
    }

    #[test]
    fn outside_extent_is_rejected() {
        let g = RotationGrid::identity(3, 10, 10).unwrap();
        assert!(g.rotation_at(-0.1, 2.0).is_err());
        assert!(g.rotation_at(2.0, 9.5).is_err());
        assert!(RotationGrid::identity(1, 10, 10).is_err());
    }
}
