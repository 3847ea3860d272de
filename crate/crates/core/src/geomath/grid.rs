use super::rotation::Vec3;
use crate::error::{contract, Result};

/// Lower corner of the region of the canonical volume that can hold the body.
pub const ACTIVE_LO: [f64; 3] = [-0.5, -1.0, -0.3];
/// Upper corner of the active region.
pub const ACTIVE_HI: [f64; 3] = [0.5, 1.0, 0.3];

/// Cube of `n^3` samples; node `(i, j, k)` sits at `origin + voxel * (i, j, k)`.
/// Storage is x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarGrid {
    n: usize,
    origin: Vec3,
    voxel: f64,
    values: Vec<f64>,
}

impl ScalarGrid {
    pub fn filled(n: usize, origin: Vec3, voxel: f64, value: f64) -> Result<Self> {
        if n < 2 {
            return Err(contract("scalar grid needs at least 2 nodes per axis"));
        }
        if !(voxel > 0.0 && voxel.is_finite()) {
            return Err(contract("voxel size must be positive"));
        }
        Ok(Self { n, origin, voxel, values: vec![value; n * n * n] })
    }

    /// Grid of `n` nodes spanning the cube `[lo, lo + side]^3`.
    pub fn spanning(n: usize, lo: Vec3, side: f64, value: f64) -> Result<Self> {
        if n < 2 {
            return Err(contract("scalar grid needs at least 2 nodes per axis"));
        }
        Self::filled(n, lo, side / (n - 1) as f64, value)
    }

    /// The canonical volume `[-1, 1]^3` at `n` nodes per axis.
    pub fn canonical(n: usize, value: f64) -> Result<Self> {
        Self::spanning(n, Vec3::new(-1.0, -1.0, -1.0), 2.0, value)
    }

    /// Fills the active region of the canonical volume with `eval`; nodes
    /// outside it get `outside`.
    pub fn fill_active(&mut self, outside: f64, batch: usize, eval: impl FnMut(&[Vec3]) -> Vec<f64>) {
        self.fill_box(&Vec3::from(ACTIVE_LO), &Vec3::from(ACTIVE_HI), outside, batch, eval);
    }

    pub fn from_fn(n: usize, origin: Vec3, voxel: f64, f: impl Fn(&Vec3) -> f64) -> Result<Self> {
        let mut g = Self::filled(n, origin, voxel, 0.0)?;
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let p = g.position(i, j, k);
                    g.values[(k * n + j) * n + i] = f(&p);
                }
            }
        }
        Ok(g)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    #[inline]
    pub fn voxel(&self) -> f64 {
        self.voxel
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.n + j) * self.n + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let idx = self.index(i, j, k);
        self.values[idx] = v;
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.voxel
    }

    /// Fills the nodes inside the box `[lo, hi]` by calling `eval` on batches
    /// of positions; every other node receives `outside`.
    pub fn fill_box(&mut self, lo: &Vec3, hi: &Vec3, outside: f64, batch: usize, mut eval: impl FnMut(&[Vec3]) -> Vec<f64>) {
        self.values.fill(outside);
        let range = |l: f64, h: f64, o: f64| {
            let a = ((l - o) / self.voxel).ceil().max(0.0) as usize;
            let b = (((h - o) / self.voxel).floor() as isize).min(self.n as isize - 1);
            (a, b)
        };
        let (i0, i1) = range(lo.x, hi.x, self.origin.x);
        let (j0, j1) = range(lo.y, hi.y, self.origin.y);
        let (k0, k1) = range(lo.z, hi.z, self.origin.z);
        if i1 < i0 as isize || j1 < j0 as isize || k1 < k0 as isize {
            return;
        }
        let mut pts = Vec::with_capacity(batch);
        let mut idx = Vec::with_capacity(batch);
        let mut flush = |pts: &mut Vec<Vec3>, idx: &mut Vec<usize>, values: &mut [f64]| {
            if pts.is_empty() {
                return;
            }
            let out = eval(pts);
            for (&i, v) in idx.iter().zip(out) {
                values[i] = v;
            }
            pts.clear();
            idx.clear();
        };
        for k in k0..=k1 as usize {
            for j in j0..=j1 as usize {
                for i in i0..=i1 as usize {
                    pts.push(self.position(i, j, k));
                    idx.push(self.index(i, j, k));
                    if pts.len() == batch.max(1) {
                        flush(&mut pts, &mut idx, &mut self.values);
                    }
                }
            }
        }
        flush(&mut pts, &mut idx, &mut self.values);
    }

    /// Trilinear interpolation; positions outside the grid clamp to the boundary.
    pub fn sample(&self, p: &Vec3) -> f64 {
        let f = (p - self.origin) / self.voxel;
        let max = (self.n - 1) as f64;
        let mut base = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..3 {
            let c = f[a].clamp(0.0, max);
            let b = (c.floor() as usize).min(self.n - 2);
            base[a] = b;
            t[a] = c - b as f64;
        }
        let mut acc = 0.0;
        for corner in 0..8 {
            let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
            let w = (if dx == 1 { t[0] } else { 1.0 - t[0] })
                * (if dy == 1 { t[1] } else { 1.0 - t[1] })
                * (if dz == 1 { t[2] } else { 1.0 - t[2] });
            acc += w * self.get(base[0] + dx, base[1] + dy, base[2] + dz);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shape() {
        assert!(ScalarGrid::filled(1, Vec3::zeros(), 0.1, 0.0).is_err());
        assert!(ScalarGrid::filled(4, Vec3::zeros(), 0.0, 0.0).is_err());
    }

    #[test]
    fn fill_box_touches_only_inside() {
        let mut g = ScalarGrid::spanning(11, Vec3::new(-1.0, -1.0, -1.0), 2.0, 0.0).unwrap();
        g.fill_box(&Vec3::new(-0.5, -0.5, -0.5), &Vec3::new(0.5, 0.5, 0.5), -1.0, 7, |p| p.iter().map(|v| v.x + 10.0).collect());
        for k in 0..11 {
            for j in 0..11 {
                for i in 0..11 {
                    let p = g.position(i, j, k);
                    let inside = p.iter().all(|c| c.abs() <= 0.5 + 1e-12);
                    let want = if inside { p.x + 10.0 } else { -1.0 };
                    assert!((g.get(i, j, k) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn trilinear_reproduces_affine() {
        let f = |p: &Vec3| 0.3 * p.x - 2.0 * p.y + p.z + 0.7;
        let g = ScalarGrid::from_fn(5, Vec3::new(0.1, 0.2, 0.3), 0.25, f).unwrap();
        for p in [Vec3::new(0.33, 0.71, 0.9), Vec3::new(1.0, 1.1, 1.2)] {
            assert!((g.sample(&p) - f(&p)).abs() < 1e-12);
        }
    }
}
