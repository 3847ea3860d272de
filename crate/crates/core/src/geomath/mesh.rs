use super::rotation::Vec3;
use crate::error::{contract, Result};

/// Indexed triangle mesh.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub colors: Option<Vec<Vec3>>,
    pub normals: Option<Vec<Vec3>>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let m = Self { vertices, triangles, colors: None, normals: None };
        m.validate()?;
        Ok(m)
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        for t in &self.triangles {
            if t.iter().any(|&i| i >= n) {
                return Err(contract(format!("triangle {t:?} indexes past {n} vertices")));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(contract(format!("degenerate triangle {t:?}")));
            }
        }
        for attr in [&self.colors, &self.normals].into_iter().flatten() {
            if attr.len() != self.vertices.len() {
                return Err(contract("per-vertex attribute length differs from vertex count"));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    /// Unnormalised face normal; its length is twice the triangle area.
    #[inline]
    pub fn face_cross(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        (b - a).cross(&(c - a))
    }

    /// Area-weighted average of incident face normals.
    pub fn compute_vertex_normals(&self) -> Vec<Vec3> {
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for t in 0..self.triangles.len() {
            let n = self.face_cross(t);
            for &i in &self.triangles[t] {
                acc[i as usize] += n;
            }
        }
        for n in &mut acc {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        acc
    }

    /// Returns vertex normals, computing them from faces if absent.
    pub fn vertex_normals(&self) -> std::borrow::Cow<'_, [Vec3]> {
        match &self.normals {
            Some(n) => std::borrow::Cow::Borrowed(n),
            None => std::borrow::Cow::Owned(self.compute_vertex_normals()),
        }
    }

    pub fn with_computed_normals(mut self) -> Self {
        self.normals = Some(self.compute_vertex_normals());
        self
    }

    pub fn translate(&mut self, t: &Vec3) {
        for v in &mut self.vertices {
            *v += t;
        }
    }

    /// Reverses every triangle's winding and negates stored normals.
    pub fn flip_orientation(&mut self) {
        for t in &mut self.triangles {
            t.swap(1, 2);
        }
        if let Some(ns) = &mut self.normals {
            for n in ns {
                *n = -*n;
            }
        }
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| 0.5 * self.face_cross(t).norm()).sum()
    }

    /// Signed volume enclosed (positive for outward-facing closed meshes).
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v))))
    }

    /// Number of undirected edges not shared by exactly two triangles.
    pub fn boundary_edge_count(&self) -> usize {
        let mut count = std::collections::HashMap::<(u32, u32), u32>::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        count.values().filter(|&&c| c != 2).count()
    }

    /// Appends another mesh, offsetting its indices.
    pub fn append(&mut self, other: &TriMesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles.extend(other.triangles.iter().map(|t| t.map(|i| i + base)));
        self.colors = None;
        self.normals = None;
    }
}

/// UV sphere with exact radial normals.
pub fn uv_sphere(center: Vec3, radius: f64, stacks: usize, slices: usize) -> TriMesh {
    use std::f64::consts::PI;
    let mut vertices = vec![center + Vec3::new(0.0, radius, 0.0)];
    for i in 1..stacks {
        let phi = PI * i as f64 / stacks as f64;
        for j in 0..slices {
            let th = 2.0 * PI * j as f64 / slices as f64;
            vertices.push(center + Vec3::new(phi.sin() * th.sin(), phi.cos(), phi.sin() * th.cos()) * radius);
        }
    }
    vertices.push(center - Vec3::new(0.0, radius, 0.0));
    let south = (vertices.len() - 1) as u32;
    let ring = |i: usize, j: usize| (1 + (i - 1) * slices + j % slices) as u32;
    let mut triangles = Vec::new();
    for j in 0..slices {
        triangles.push([0, ring(1, j), ring(1, j + 1)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            let (a, b, c, d) = (ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1));
            triangles.push([a, c, d]);
            triangles.push([a, d, b]);
        }
    }
    for j in 0..slices {
        triangles.push([south, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
    }
    let normals = vertices.iter().map(|v| (v - center) / radius).collect();
    TriMesh { vertices, triangles, colors: None, normals: Some(normals) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_indices() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 3]]).is_err());
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 1]]).is_err());
        assert!(TriMesh::new(v, vec![[0, 1, 2]]).is_ok());
    }

    #[test]
    fn sphere_is_closed_and_outward() {
        let s = uv_sphere(Vec3::zeros(), 0.5, 24, 48);
        s.validate().unwrap();
        assert_eq!(s.boundary_edge_count(), 0);
        let vol = s.signed_volume();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.125;
        assert!(vol > 0.0 && (vol - exact).abs() / exact < 0.02, "{vol}");
        let computed = s.compute_vertex_normals();
        for (a, b) in computed.iter().zip(s.normals.as_ref().unwrap()) {
            assert!(a.dot(b) > 0.99);
        }
    }

    #[test]
    fn flip_negates_volume() {
        let mut s = uv_sphere(Vec3::new(0.1, 0.2, 0.3), 0.2, 8, 12);
        let v = s.signed_volume();
        s.flip_orientation();
        assert!((s.signed_volume() + v).abs() < 1e-12);
    }
}
