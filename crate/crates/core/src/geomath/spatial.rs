use std::collections::HashMap;

use super::mesh::TriMesh;
use super::rotation::Vec3;

/// Closest point on triangle `abc` to `p`.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

type Cell = [i64; 3];

fn cell_of(p: &Vec3, size: f64) -> Cell {
    [(p.x / size).floor() as i64, (p.y / size).floor() as i64, (p.z / size).floor() as i64]
}

/// Visits cells at Chebyshev ring `r` around `c`.
fn ring(c: Cell, r: i64, mut f: impl FnMut(Cell)) {
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx.abs().max(dy.abs()).max(dz.abs()) == r {
                    f([c[0] + dx, c[1] + dy, c[2] + dz]);
                }
            }
        }
    }
}

/// Uniform-hash nearest-neighbour lookup over a point set.
#[derive(Clone, Debug)]
pub struct PointIndex {
    points: Vec<Vec3>,
    size: f64,
    cells: HashMap<Cell, Vec<u32>>,
    bounds: (Cell, Cell),
}

impl PointIndex {
    pub fn new(points: &[Vec3], cell_size: f64) -> Self {
        let mut cells: HashMap<Cell, Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(cell_of(p, cell_size)).or_default().push(i as u32);
        }
        let bounds = cell_bounds(cells.keys());
        Self { points: points.to_vec(), size: cell_size, cells, bounds }
    }

    /// Index and distance of the nearest point; `None` for an empty set.
    pub fn nearest(&self, p: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let c = cell_of(p, self.size);
        let mut best: Option<(usize, f64)> = None;
        let mut r = 0;
        loop {
            ring(c, r, |cell| {
                if let Some(ids) = self.cells.get(&cell) {
                    for &i in ids {
                        let d = (self.points[i as usize] - p).norm();
                        if best.is_none_or(|(_, bd)| d < bd) {
                            best = Some((i as usize, d));
                        }
                    }
                }
            });
            if let Some((_, d)) = best {
                if d <= r as f64 * self.size {
                    return best;
                }
            }
            r += 1;
            if r > last_ring(c, &self.bounds) {
                return best;
            }
        }
    }
}

/// Uniform-hash distance queries against a triangle mesh surface.
#[derive(Clone, Debug)]
pub struct SurfaceIndex {
    tris: Vec<[Vec3; 3]>,
    size: f64,
    cells: HashMap<Cell, Vec<u32>>,
    bounds: (Cell, Cell),
}

impl SurfaceIndex {
    pub fn new(mesh: &TriMesh, cell_size: f64) -> Self {
        let tris: Vec<[Vec3; 3]> = (0..mesh.triangles.len()).map(|t| mesh.corners(t)).collect();
        let mut cells: HashMap<Cell, Vec<u32>> = HashMap::new();
        for (t, v) in tris.iter().enumerate() {
            let lo = cell_of(&v[0].inf(&v[1]).inf(&v[2]), cell_size);
            let hi = cell_of(&v[0].sup(&v[1]).sup(&v[2]), cell_size);
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        cells.entry([x, y, z]).or_default().push(t as u32);
                    }
                }
            }
        }
        let bounds = cell_bounds(cells.keys());
        Self { tris, size: cell_size, cells, bounds }
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    /// Closest surface point and its distance; `None` for an empty mesh.
    pub fn closest(&self, p: &Vec3) -> Option<(Vec3, f64)> {
        if self.tris.is_empty() {
            return None;
        }
        let c = cell_of(p, self.size);
        let mut best: Option<(Vec3, f64)> = None;
        let mut r = 0;
        loop {
            ring(c, r, |cell| {
                if let Some(ids) = self.cells.get(&cell) {
                    for &t in ids {
                        let [a, b, cc] = &self.tris[t as usize];
                        let q = closest_point_on_triangle(p, a, b, cc);
                        let d = (q - p).norm();
                        if best.is_none_or(|(_, bd)| d < bd) {
                            best = Some((q, d));
                        }
                    }
                }
            });
            if let Some((_, d)) = best {
                if d <= r as f64 * self.size {
                    return best;
                }
            }
            r += 1;
            if r > last_ring(c, &self.bounds) {
                return best;
            }
        }
    }

    pub fn distance(&self, p: &Vec3) -> Option<f64> {
        self.closest(p).map(|(_, d)| d)
    }
}

fn cell_bounds<'a>(keys: impl Iterator<Item = &'a Cell>) -> (Cell, Cell) {
    let mut lo = [i64::MAX; 3];
    let mut hi = [i64::MIN; 3];
    for k in keys {
        for a in 0..3 {
            lo[a] = lo[a].min(k[a]);
            hi[a] = hi[a].max(k[a]);
        }
    }
    (lo, hi)
}

/// Ring beyond which no occupied cell remains.
fn last_ring(c: Cell, bounds: &(Cell, Cell)) -> i64 {
    (0..3).map(|a| (c[a] - bounds.0[a]).abs().max((bounds.1[a] - c[a]).abs())).max().unwrap_or(0)
}

/// Symmetric Hausdorff distance between two meshes, measured from the
/// vertices of each mesh to the surface of the other.
pub fn hausdorff(a: &TriMesh, b: &TriMesh, cell_size: f64) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    let one_way = |from: &TriMesh, to: &TriMesh| {
        let idx = SurfaceIndex::new(to, cell_size);
        from.vertices.iter().map(|v| idx.distance(v).unwrap_or(f64::INFINITY)).fold(0.0, f64::max)
    };
    one_way(a, b).max(one_way(b, a))
}
