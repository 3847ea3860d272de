//! Synthetic avatar/image map pairs with a known rotation field.

use nalgebra::Rotation3;

use super::{Energy, FusionConfig};
use crate::error::{contract, Result};
use crate::geomath::{rodrigues, Mat3, NormalMap, Rot3, RotationGrid, Vec3};

/// Normals of a shallow dome over `[-1, 1]^2`, optionally clipped to a disk.
pub fn dome(size: usize, disk: bool) -> NormalMap {
    let mut m = NormalMap::invalid(size, size);
    for row in 0..size {
        for col in 0..size {
            let x = 2.0 * col as f64 / (size - 1) as f64 - 1.0;
            let y = 2.0 * row as f64 / (size - 1) as f64 - 1.0;
            if disk && x * x + y * y > 0.9 {
                continue;
            }
            m.set(col, row, Some(Vec3::new(0.6 * x, 0.6 * y, 1.5).normalize()));
        }
    }
    m
}

/// Applies `f(col, row, n)` to every valid normal and renormalises.
pub fn map_with(src: &NormalMap, f: impl Fn(usize, usize, Vec3) -> Vec3) -> NormalMap {
    let mut m = NormalMap::invalid(src.width(), src.height());
    for row in 0..src.height() {
        for col in 0..src.width() {
            if let Some(n) = src.get(col, row) {
                m.set(col, row, Some(f(col, row, n).normalize()));
            }
        }
    }
    m
}

pub fn axis_angle(axis: Vec3, deg: f64) -> Rot3 {
    rodrigues(&(axis.normalize() * deg.to_radians()))
}

/// Garment-like folds: normals swing by about 40 degrees with a period of
/// roughly 31 px. On a flat dome the twist about the normal is nearly
/// unobservable, so it cannot pin a varying rotation field down.
pub fn folds(size: usize) -> NormalMap {
    map_with(&dome(size, false), |c, r, _| Vec3::new(0.8 * (c as f64 * 0.2).sin(), 0.8 * (r as f64 * 0.2).cos(), 1.0))
}

/// Rotation at grid coordinates `(u, v)`: at most 20 degrees, wavelength 8 cells.
pub fn smooth_field(u: f64, v: f64) -> Rot3 {
    let k = std::f64::consts::TAU / 8.0;
    let amp = 20f64.to_radians() / 2f64.sqrt();
    rodrigues(&Vec3::new(amp * (k * u).sin(), amp * (k * v).cos(), 0.0))
}

/// Avatar map, observed map and the rotation of every grid cell
/// (row-major) that maps one onto the other.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub avatar: NormalMap,
    pub image: NormalMap,
    pub grid_size: usize,
    pub truth: Vec<Rot3>,
}

/// The observation is the disk-clipped dome rotated by one fixed rotation.
pub fn constant_rotation(size: usize, grid_size: usize, degrees: f64) -> Scenario {
    let avatar = dome(size, true);
    let q = axis_angle(Vec3::new(0.3, -1.0, 0.4), degrees);
    let image = map_with(&avatar, |_, _, n| q.apply(&n));
    Scenario { avatar, image, grid_size, truth: vec![q; grid_size * grid_size] }
}

/// Folds with added high-frequency detail (period 4 px, about 6 degrees),
/// rotated by [`smooth_field`] sampled at each pixel's grid coordinates.
pub fn smooth_rotation(size: usize, grid_size: usize) -> Scenario {
    let s = (grid_size - 1) as f64 / (size - 1) as f64;
    let avatar = folds(size);
    let quarter = std::f64::consts::FRAC_PI_2;
    let detailed = map_with(&avatar, |c, r, n| n + Vec3::new(0.1 * (c as f64 * quarter).sin(), 0.1 * (r as f64 * quarter).cos(), 0.0));
    let image = map_with(&detailed, |c, r, n| smooth_field(c as f64 * s, r as f64 * s).apply(&n));
    let truth = (0..grid_size * grid_size).map(|i| smooth_field((i % grid_size) as f64, (i / grid_size) as f64)).collect();
    Scenario { avatar, image, grid_size, truth }
}

/// Straight-loop energy using nalgebra's rotation log and an independently
/// written bilinear weighting, for checking [`super::energy`].
pub fn reference_energy(grid: &RotationGrid, a: &NormalMap, b: &NormalMap, cfg: &FusionConfig) -> Result<Energy> {
    let (w, h) = (a.width(), a.height());
    let g = grid.size();
    if !a.same_size(b) || grid.extent() != (w, h) || w < 2 || h < 2 {
        return Err(contract("maps and rotation grid differ in size"));
    }
    let cells = grid.cells();
    let mut fit = 0.0;
    for row in 0..h {
        for col in 0..w {
            let (Some(na), Some(nb)) = (a.get(col, row), b.get(col, row)) else { continue };
            let fx = col as f64 * (g - 1) as f64 / (w - 1) as f64;
            let fy = row as f64 * (g - 1) as f64 / (h - 1) as f64;
            let mut m = Mat3::zeros();
            for gy in 0..g {
                for gx in 0..g {
                    let wx = (1.0 - (fx - gx as f64).abs()).max(0.0);
                    let wy = (1.0 - (fy - gy as f64).abs()).max(0.0);
                    m += cells[gy * g + gx].matrix() * (wx * wy);
                }
            }
            let r = m * na - nb;
            fit += r.x * r.x + r.y * r.y + r.z * r.z;
        }
    }
    let log = |i: usize| Rotation3::from_matrix_unchecked(*cells[i].matrix()).scaled_axis();
    let mut smooth = 0.0;
    for gy in 0..g as isize {
        for gx in 0..g as isize {
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let (nx, ny) = (gx + dx, gy + dy);
                if nx < 0 || ny < 0 || nx >= g as isize || ny >= g as isize {
                    continue;
                }
                let d = log((gy * g as isize + gx) as usize) - log((ny * g as isize + nx) as usize);
                smooth += d.norm_squared();
            }
        }
    }
    Ok(Energy { total: cfg.lambda_fitting * fit + cfg.lambda_smooth * smooth, fitting: fit, smooth })
}
