use super::scenarios::{self, axis_angle, dome, map_with, smooth_field};
use super::*;
use crate::geomath::{geodesic_angle, highpass};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg(g: usize) -> FusionConfig {
    FusionConfig { grid_size: g, ..FusionConfig::default() }
}

fn random_grid(g: usize, w: usize, rng: &mut ChaCha8Rng, max_angle: f64) -> RotationGrid {
    let mut grid = RotationGrid::identity(g, w, w).unwrap();
    for c in grid.cells_mut() {
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        *c = rodrigues(&(axis.normalize() * rng.random_range(0.0..max_angle)));
    }
    grid
}

#[test]
fn energy_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for g in [2, 3, 5] {
        let a = dome(8, true);
        let b = map_with(&dome(8, false), |c, r, n| n + Vec3::new(0.1 * (c as f64).sin(), 0.05 * r as f64, 0.0));
        let grid = random_grid(g, 8, &mut rng, 2.5);
        let c = FusionConfig { lambda_fitting: 0.7, lambda_smooth: 1.3, grid_size: g, ..FusionConfig::default() };
        let e = energy(&grid, &a, &b, &c).unwrap();
        let r = scenarios::reference_energy(&grid, &a, &b, &c).unwrap();
        let (t, f, s) = (r.total, r.fitting, r.smooth);
        assert!((e.total - t).abs() < 1e-10 * t.max(1.0), "{} vs {t}", e.total);
        assert!((e.fitting - f).abs() < 1e-10 * f.max(1.0));
        assert!((e.smooth - s).abs() < 1e-10 * s.max(1.0));
    }
}

#[test]
fn trivial_energies() {
    let a = dome(16, true);
    let grid = RotationGrid::identity(4, 16, 16).unwrap();
    assert_eq!(energy(&grid, &a, &a, &cfg(4)).unwrap().total, 0.0);
    let mut constant = grid.clone();
    constant.cells_mut().fill(axis_angle(Vec3::new(1.0, 2.0, 3.0), 30.0));
    assert!(energy(&constant, &a, &a, &cfg(4)).unwrap().smooth < 1e-24);
    let empty = NormalMap::invalid(16, 16);
    assert!(matches!(energy(&grid, &a, &empty, &cfg(4)), Err(Error::NoOverlap)));
}

#[test]
fn normal_equations_match_energy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (g, w) = (4, 12);
    let a = dome(w, true);
    let b = map_with(&a, |c, r, n| n + Vec3::new(0.2 * (c as f64 * 0.7).cos(), 0.1 * (r as f64).sin(), 0.0));
    let grid = random_grid(g, w, &mut rng, 0.6);
    let c = FusionConfig { lambda_smooth: 0.5, grid_size: g, ..FusionConfig::default() };
    let o = overlap(&grid, &a, &b).unwrap();
    let edges = grid_edges(g);
    let (_, rhs) = assemble(grid.cells(), &o, g, &edges, &c).unwrap();
    let h = 1e-6;
    for i in 0..3 * g * g {
        let perturbed = |s: f64| {
            let mut cells = grid.cells().to_vec();
            let mut d = Vec3::zeros();
            d[i % 3] = s;
            cells[i / 3] = rodrigues(&d).compose(&cells[i / 3]);
            energy_of(&cells, &o, g, &c).unwrap().total
        };
        let fd = (perturbed(h) - perturbed(-h)) / (2.0 * h);
        // dE/d delta = 2 J^T r = -2 rhs.
        assert!((fd + 2.0 * rhs[i]).abs() < 1e-6 * (1.0 + fd.abs()), "unknown {i}: {fd} vs {}", -2.0 * rhs[i]);
    }
}

#[test]
fn recovers_constant_rotation() {
    let sc = scenarios::constant_rotation(64, 8, 15.0);
    let (a, b) = (&sc.avatar, &sc.image);
    let res = fuse_view(a, b, &cfg(8)).unwrap();
    for (cell, q) in res.grid.cells().iter().zip(&sc.truth) {
        assert!(geodesic_angle(cell, q).to_degrees() < 0.5);
    }
    for row in 0..64 {
        for col in 0..64 {
            if let Some(n) = a.get(col, row) {
                let f = res.fused.get(col, row).unwrap();
                assert!(angle_between(&f, &n).to_degrees() < 0.6);
                assert!((f.norm() - 1.0).abs() < 1e-12);
            }
        }
    }
    assert!(res.residual_after.mean_deg < res.residual_before.mean_deg);
    for pair in res.trace.windows(2).skip(3) {
        assert!(pair[1].total <= pair[0].total);
    }
}

#[test]
fn identity_observation_keeps_identity_grid() {
    let a = dome(32, true);
    let (grid, trace) = solve_rotations(&a, &a, &cfg(6)).unwrap();
    assert_eq!(trace.len(), 1);
    for c in grid.cells() {
        assert!(geodesic_angle(c, &Rot3::identity()) < 1e-6);
    }
    let fused = fuse_map(&a, &a, &grid, &cfg(6)).unwrap();
    assert!(fused.mean_angle_to(&a).unwrap() < 1e-9);
}

#[test]
fn recovers_smooth_field_and_keeps_detail() {
    let sc = scenarios::smooth_rotation(128, 16);
    let res = fuse_view(&sc.avatar, &sc.image, &cfg(sc.grid_size)).unwrap();
    let err: f64 = res.grid.cells().iter().zip(&sc.truth).map(|(c, t)| geodesic_angle(c, t).to_degrees()).sum();
    let mean = err / sc.truth.len() as f64;
    assert!(mean < 2.0, "mean cell error {mean} deg");
    let cos = highpass(&res.fused, 3.0).unwrap().cosine_similarity(&highpass(&sc.image, 3.0).unwrap(), None);
    assert!(cos > 0.9, "high-pass cosine {cos}");
}

#[test]
fn common_rotation_equivariance() {
    let a = dome(48, true);
    let r = axis_angle(Vec3::new(0.3, -1.0, 0.4), 15.0);
    let b = map_with(&a, |_, _, n| r.apply(&n));
    let q = axis_angle(Vec3::new(-0.5, 0.2, 1.0), 40.0);
    let c = cfg(6);
    let plain = fuse_view(&a, &b, &c).unwrap();
    let qa = map_with(&a, |_, _, n| q.apply(&n));
    let qb = map_with(&b, |_, _, n| q.apply(&n));
    let rotated = fuse_view(&qa, &qb, &c).unwrap();
    for row in 0..48 {
        for col in 0..48 {
            if let Some(f) = plain.fused.get(col, row) {
                let g = rotated.fused.get(col, row).unwrap();
                assert!((q.apply(&f) - g).norm() < 1e-6);
            }
        }
    }
}

#[test]
fn missing_view_passes_through() {
    let a = dome(32, true);
    let back = map_with(&a, |_, _, n| Vec3::new(-n.x, n.y, -n.z));
    let q = axis_angle(Vec3::new(0.0, 1.0, 0.0), 10.0);
    let b = map_with(&a, |_, _, n| q.apply(&n));
    let (front, rear) = fuse(&a, &back, &b, &NormalMap::invalid(32, 32), &cfg(4)).unwrap();
    assert_eq!(rear.fused, back);
    assert!(rear.trace.is_empty());
    assert!(front.fused.mean_angle_to(&a).unwrap() < 0.5f64.to_radians());
}

#[test]
fn fused_mask_follows_avatar() {
    let a = dome(32, true);
    let b = dome(32, false);
    let mut partial = b.clone();
    for row in 0..16 {
        for col in 0..32 {
            partial.set(col, row, None);
        }
    }
    let grid = RotationGrid::identity(4, 32, 32).unwrap();
    let fused = fuse_map(&a, &partial, &grid, &cfg(4)).unwrap();
    assert_eq!(fused.mask(), a.mask());
    assert_eq!(fused.get(16, 2), a.get(16, 2));
}

#[test]
fn energy_csv_has_header_and_rows() {
    let csv = energy_csv(&[Energy { total: 1.0, fitting: 0.5, smooth: 0.5 }, Energy::default()]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "iteration,E,E_fitting,E_smooth");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,1e0,"));
}

#[test]
fn rejects_bad_config_and_sizes() {
    let a = dome(16, true);
    assert!(solve_rotations(&a, &a, &FusionConfig { iterations: 0, ..cfg(4) }).is_err());
    assert!(solve_rotations(&a, &a, &FusionConfig { lambda_smooth: -1.0, ..cfg(4) }).is_err());
    assert!(solve_rotations(&a, &dome(8, true), &cfg(4)).is_err());
}

#[test]
fn desk_scale_runs_quickly() {
    let a = dome(256, true);
    let b = map_with(&a, |c, r, n| smooth_field(c as f64 / 8.0, r as f64 / 8.0).apply(&n));
    let start = std::time::Instant::now();
    let res = fuse_view(&a, &b, &cfg(32)).unwrap();
    let took = start.elapsed().as_secs_f64();
    assert!(took < 30.0, "took {took} s");
    assert!(res.residual_after.mean_deg < res.residual_before.mean_deg);
}
