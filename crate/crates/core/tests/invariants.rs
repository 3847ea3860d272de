//! Cross-module invariants checked on random inputs.

use proptest::prelude::*;
use volcap::bodymodel::{forward_skin, inverse_skin, ArticulatedBody, Pose};
use volcap::geomath::{rodrigues, NormalMap, RotationGrid, Vec3};
use volcap::geotexavatar::composite;
use volcap::io::{Tensor, TnsrFile};
use volcap::normalfusion::{energy, fuse_map, FusionConfig};

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

/// A `size`x`size` map of upward-facing unit normals with some pixels invalid.
fn normal_map(size: usize) -> impl Strategy<Value = NormalMap> {
    prop::collection::vec((vec3(0.8), any::<bool>()), size * size).prop_map(move |px| {
        let mut m = NormalMap::invalid(size, size);
        for (i, (v, valid)) in px.into_iter().enumerate() {
            if valid {
                m.set(i % size, i / size, Some((v + Vec3::new(0.0, 0.0, 1.0)).normalize()));
            }
        }
        m
    })
}

fn random_grid(size: usize, extent: usize, axes: &[Vec3]) -> RotationGrid {
    let mut grid = RotationGrid::identity(size, extent, extent).unwrap();
    for (cell, w) in grid.cells_mut().iter_mut().zip(axes.iter().cycle()) {
        *cell = rodrigues(w);
    }
    grid
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn compositing_weights_are_a_partition_of_at_most_one(
        samples in prop::collection::vec((0.0..50.0f64, 0.0..0.2f64, 0.0..1.0f64), 1..24)
    ) {
        let sigma: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let delta: Vec<f64> = samples.iter().map(|s| s.1).collect();
        let colors: Vec<Vec3> = samples.iter().map(|s| Vec3::new(s.2, 1.0 - s.2, 0.5)).collect();
        let (color, weights) = composite(&sigma, &delta, &colors).unwrap();
        let total: f64 = weights.iter().sum();
        prop_assert!(weights.iter().all(|w| *w >= 0.0));
        prop_assert!(total <= 1.0 + 1e-12);
        prop_assert!(color.iter().all(|c| *c >= 0.0 && *c <= total + 1e-12));
    }

    #[test]
    fn grid_interpolation_weights_sum_to_one(size in 2usize..9, px in 0.0..31.0f64, py in 0.0..31.0f64) {
        let grid = RotationGrid::identity(size, 32, 32).unwrap();
        let w = grid.weights_at(px, py).unwrap();
        prop_assert!(w.iter().all(|(_, x)| *x >= 0.0));
        prop_assert!((w.iter().map(|(_, x)| x).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fused_maps_hold_unit_normals_on_the_avatar_mask(
        avatar in normal_map(8),
        image in normal_map(8),
        axes in prop::collection::vec(vec3(0.5), 9),
    ) {
        let cfg = FusionConfig { grid_size: 3, ..FusionConfig::default() };
        let fused = fuse_map(&avatar, &image, &random_grid(3, 8, &axes), &cfg).unwrap();
        for row in 0..8 {
            for col in 0..8 {
                prop_assert_eq!(fused.get(col, row).is_some(), avatar.get(col, row).is_some());
                if let Some(n) = fused.get(col, row) {
                    prop_assert!((n.norm() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn fusion_energy_is_nonnegative_and_smooth_term_vanishes_for_constant_grids(
        avatar in normal_map(8),
        image in normal_map(8),
        axis in vec3(1.0),
    ) {
        let cfg = FusionConfig { grid_size: 3, ..FusionConfig::default() };
        let e = energy(&random_grid(3, 8, &[axis]), &avatar, &image, &cfg).unwrap();
        prop_assert!(e.fitting >= 0.0 && e.total >= 0.0);
        prop_assert!(e.smooth.abs() < 1e-20);
    }

    #[test]
    fn tnsr_round_trips_f64_tensors(data in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 1..64)) {
        let mut f = TnsrFile::new();
        f.insert("x", Tensor::f64(&[data.len()], data.clone()).unwrap()).unwrap();
        let back = TnsrFile::from_bytes(&f.to_bytes()).unwrap();
        prop_assert_eq!(back.f64("x").unwrap().0, &data[..]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn skinning_round_trips_rest_surface_points(angles in prop::collection::vec(vec3(0.5), 8), pick in 0usize..10_000) {
        let body = ArticulatedBody::toy(32).unwrap();
        let mut pose = Pose::rest(body.joint_count());
        for (j, a) in angles.iter().enumerate().take(body.joint_count()).skip(1) {
            pose.set_joint(j, *a);
        }
        let mesh = body.mesh();
        let i = pick % mesh.vertices.len();
        let weights = body.weights_for(&mesh.vertices[i..=i]);
        let posed = forward_skin(&body, &pose, &mesh.vertices[i..=i], &weights).unwrap();
        let back = inverse_skin(&body, &pose, &posed, &weights).unwrap();
        prop_assert!((back[0].unwrap() - mesh.vertices[i]).norm() < 1e-9);
    }
}
