//! Marching cubes over a [`ScalarGrid`].
//!
//! The 256-case table is derived at first use by walking the cube faces:
//! on every face the runs of corners above the level are cut off by one
//! segment each, segments chain into closed loops, and each loop is fanned
//! from its smallest edge id. A face whose diagonal corners are both above
//! always keeps them apart, so neighbouring cubes agree on every shared face
//! and the output has no cracks. Complementary cases come out as exact
//! reversals of each other except on such ambiguous faces.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::grid::ScalarGrid;
use super::mesh::TriMesh;
use super::rotation::Vec3;
use crate::error::{contract, Result};

/// Corner `c` of the unit cube sits at `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// The 12 cube edges as `(low corner, axis)`; the high corner is `low | 1 << axis`.
fn edges() -> [(usize, usize); 12] {
    let mut out = [(0, 0); 12];
    let mut n = 0;
    for axis in 0..3 {
        for c in 0..8 {
            if c & (1 << axis) == 0 {
                out[n] = (c, axis);
                n += 1;
            }
        }
    }
    out
}

fn edge_id(a: usize, b: usize) -> usize {
    let (lo, hi) = (a.min(b), a.max(b));
    let axis = (hi ^ lo).trailing_zeros() as usize;
    edges().iter().position(|&e| e == (lo, axis)).expect("corners share an edge")
}

/// Corners of each face in counter-clockwise order seen from outside.
fn faces() -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for axis in 0..3 {
        for side in 0..2 {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            // (e_u, e_v) is right-handed about +axis; swap for the -axis face.
            let (u, v) = if side == 1 { (u, v) } else { (v, u) };
            let mut corners: Vec<usize> = (0..8).filter(|&c| corner_offset(c)[axis] == side).collect();
            corners.sort_by(|&a, &b| {
                let ang = |c: usize| {
                    let o = corner_offset(c);
                    (o[v] as f64 - 0.5).atan2(o[u] as f64 - 0.5)
                };
                ang(a).total_cmp(&ang(b))
            });
            out.push([corners[0], corners[1], corners[2], corners[3]]);
        }
    }
    out
}

fn build_case(case: usize, faces: &[[usize; 4]]) -> Vec<[u8; 3]> {
    let above = |c: usize| case & (1 << c) != 0;
    // next[exit edge] = entry edge
    let mut next: HashMap<usize, usize> = HashMap::new();
    for f in faces {
        let flags: Vec<bool> = f.iter().map(|&c| above(c)).collect();
        if flags.iter().all(|&a| a) || flags.iter().all(|&a| !a) {
            continue;
        }
        for s in 0..4 {
            let prev = (s + 3) % 4;
            if flags[s] && !flags[prev] {
                let entry = edge_id(f[prev], f[s]);
                let mut e = s;
                while flags[(e + 1) % 4] {
                    e = (e + 1) % 4;
                }
                let exit = edge_id(f[e], f[(e + 1) % 4]);
                let dup = next.insert(exit, entry);
                debug_assert!(dup.is_none());
            }
        }
    }
    let mut tris = Vec::new();
    while let Some(&start) = next.keys().min() {
        let mut lp = vec![start];
        let mut cur = next.remove(&start).expect("start present");
        while cur != start {
            lp.push(cur);
            cur = next.remove(&cur).expect("face segments close into loops");
        }
        let m = lp.iter().enumerate().min_by_key(|(_, e)| **e).unwrap().0;
        lp.rotate_left(m);
        for i in 1..lp.len() - 1 {
            tris.push([lp[0] as u8, lp[i] as u8, lp[i + 1] as u8]);
        }
    }
    tris
}

fn table() -> &'static Vec<Vec<[u8; 3]>> {
    static TABLE: OnceLock<Vec<Vec<[u8; 3]>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let faces = faces();
        let mut t: Vec<Vec<[u8; 3]>> = (0..256).map(|c| build_case(c, &faces)).collect();
        // Orient so normals point toward increasing field: in case 1 only
        // corner 0 is above, so the normal must face the origin corner.
        let mid = |e: u8| {
            let (c, axis) = edges()[e as usize];
            let o = corner_offset(c);
            let mut p = Vec3::new(o[0] as f64, o[1] as f64, o[2] as f64);
            p[axis] += 0.5;
            p
        };
        let [a, b, c] = t[1][0];
        let n = (mid(b) - mid(a)).cross(&(mid(c) - mid(a)));
        if n.dot(&Vec3::new(-1.0, -1.0, -1.0)) < 0.0 {
            for case in &mut t {
                for tri in case {
                    tri.swap(1, 2);
                }
            }
        }
        t
    })
}

/// Triangulates the set `{x : f(x) = level}` with per-edge linear interpolation.
/// A node counts as above when its value exceeds `level`; triangle normals
/// point toward increasing field values. Vertices are shared between cubes.
pub fn marching_cubes(grid: &ScalarGrid, level: f64) -> Result<TriMesh> {
    if grid.values().iter().any(|v| !v.is_finite()) {
        return Err(contract("marching cubes needs a finite field"));
    }
    let n = grid.n();
    let table = table();
    let edge_list = edges();
    let mut mesh = TriMesh::default();
    let mut cache: HashMap<usize, u32> = HashMap::new();
    let mut vals = [0.0f64; 8];
    for k in 0..n - 1 {
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                let mut case = 0usize;
                for (c, v) in vals.iter_mut().enumerate() {
                    let o = corner_offset(c);
                    *v = grid.get(i + o[0], j + o[1], k + o[2]);
                    if *v > level {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                for tri in &table[case] {
                    let mut ids = [0u32; 3];
                    for (slot, &e) in ids.iter_mut().zip(tri) {
                        let (c, axis) = edge_list[e as usize];
                        let o = corner_offset(c);
                        let (gi, gj, gk) = (i + o[0], j + o[1], k + o[2]);
                        let key = grid.index(gi, gj, gk) * 3 + axis;
                        *slot = *cache.entry(key).or_insert_with(|| {
                            let va = vals[c];
                            let vb = vals[c | (1 << axis)];
                            let t = (level - va) / (vb - va);
                            let mut p = grid.position(gi, gj, gk);
                            p[axis] += t * grid.voxel();
                            mesh.vertices.push(p);
                            (mesh.vertices.len() - 1) as u32
                        });
                    }
                    mesh.triangles.push(ids);
                }
            }
        }
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_grid(sign: f64, offset: Vec3) -> ScalarGrid {
        let c = Vec3::new(0.013, -0.021, 0.007) + offset;
        ScalarGrid::spanning(64, Vec3::new(-0.4, -0.4, -0.4) + offset, 0.8, 0.0)
            .map(|g| {
                let mut g = g;
                for k in 0..64 {
                    for j in 0..64 {
                        for i in 0..64 {
                            let p = g.position(i, j, k);
                            g.set(i, j, k, sign * ((p - c).norm() - 0.25));
                        }
                    }
                }
                g
            })
            .unwrap()
    }

    #[test]
    fn table_cases_close_and_complement() {
        let t = table();
        assert!(t[0].is_empty() && t[255].is_empty());
        assert_eq!(t[1].len(), 1);
        let faces = faces();
        for (case, tris) in t.iter().enumerate() {
            let ambiguous = faces.iter().any(|f| {
                let fl: Vec<bool> = f.iter().map(|&c| case & (1 << c) != 0).collect();
                fl[0] == fl[2] && fl[1] == fl[3] && fl[0] != fl[1]
            });
            if !ambiguous {
                let mut mine: Vec<[u8; 3]> = tris.clone();
                let mut other: Vec<[u8; 3]> = t[255 - case].iter().map(|&[a, b, c]| [a, c, b]).collect();
                for v in [&mut mine, &mut other] {
                    for tri in v.iter_mut() {
                        let m = (0..3).min_by_key(|&i| tri[i]).unwrap();
                        tri.rotate_left(m);
                    }
                    v.sort();
                }
                assert_eq!(mine, other, "case {case}");
            }
        }
    }

    #[test]
    fn constant_field_is_empty() {
        let g = ScalarGrid::filled(8, Vec3::zeros(), 0.1, 0.0).unwrap();
        assert!(marching_cubes(&g, 0.5).unwrap().is_empty());
    }

    #[test]
    fn sphere_vertices_near_surface_and_closed() {
        let g = sphere_grid(1.0, Vec3::zeros());
        let m = marching_cubes(&g, 0.0).unwrap();
        m.validate().unwrap();
        assert!(m.triangles.len() > 1000);
        let c = Vec3::new(0.013, -0.021, 0.007);
        for v in &m.vertices {
            assert!(((v - c).norm() - 0.25).abs() < 1.5 * g.voxel());
        }
        assert_eq!(m.boundary_edge_count(), 0);
        // increasing signed distance points outward
        assert!(m.signed_volume() > 0.0);
    }

    #[test]
    fn negated_field_reverses_triangles() {
        let a = marching_cubes(&sphere_grid(1.0, Vec3::zeros()), 0.0).unwrap();
        let b = marching_cubes(&sphere_grid(-1.0, Vec3::zeros()), 0.0).unwrap();
        assert_eq!(a.vertices.len(), b.vertices.len());
        let key = |v: &Vec3| [v.x, v.y, v.z].map(|c| (c * 1e9).round() as i64);
        let pos: HashMap<[i64; 3], usize> = b.vertices.iter().enumerate().map(|(i, v)| (key(v), i)).collect();
        let canon = |t: [usize; 3]| {
            let m = (0..3).min_by_key(|&i| t[i]).unwrap();
            let mut t = t;
            t.rotate_left(m);
            t
        };
        let mut mapped: Vec<[usize; 3]> = a
            .triangles
            .iter()
            .map(|t| {
                let [x, y, z] = t.map(|i| pos[&key(&a.vertices[i as usize])]);
                canon([x, z, y])
            })
            .collect();
        let mut theirs: Vec<[usize; 3]> = b.triangles.iter().map(|t| canon(t.map(|i| i as usize))).collect();
        mapped.sort();
        theirs.sort();
        assert_eq!(mapped, theirs);
    }

    #[test]
    fn translation_equivariant() {
        let shift = Vec3::new(0.3, -0.2, 0.125);
        let a = marching_cubes(&sphere_grid(1.0, Vec3::zeros()), 0.0).unwrap();
        let b = marching_cubes(&sphere_grid(1.0, shift), 0.0).unwrap();
        assert_eq!(a.triangles, b.triangles);
        for (p, q) in a.vertices.iter().zip(&b.vertices) {
            assert!((p + shift - q).norm() < 1e-9);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let mut g = ScalarGrid::filled(3, Vec3::zeros(), 0.1, 0.0).unwrap();
        g.set(1, 1, 1, f64::NAN);
        assert!(marching_cubes(&g, 0.0).is_err());
    }
}
