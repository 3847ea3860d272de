//! Canonical normal fusion: a grid of rotations is solved by damped
//! Gauss-Newton to align the avatar normal map with the observed one, then
//! observed detail is carried into the avatar map with the rotations fixed.

mod banded;
pub mod scenarios;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use banded::BandedSpd;

use crate::error::{contract, Error, Result};
use crate::geomath::{angle_between, left_jacobian_inv, rod_inv, rodrigues, Mat3, NormalMap, Rot3, RotationGrid, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub lambda_fitting: f64,
    pub lambda_smooth: f64,
    /// Rotation nodes per side.
    pub grid_size: usize,
    pub iterations: usize,
    /// Levenberg damping added to the normal-equation diagonal.
    pub damping: f64,
    /// Stop once an accepted step lowers the energy by less than this fraction.
    pub min_relative_decrease: f64,
    /// Weight of the rotated observation against the avatar prior in the
    /// second phase; 1 keeps the exact per-pixel minimiser.
    pub blend: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            lambda_fitting: 1.0,
            lambda_smooth: 1.0,
            grid_size: 32,
            iterations: 50,
            damping: 1e-6,
            min_relative_decrease: 1e-8,
            blend: 1.0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_fitting >= 0.0 && self.lambda_smooth >= 0.0) {
            return Err(contract("fusion weights must be nonnegative"));
        }
        if self.iterations == 0 {
            return Err(contract("fusion needs at least one iteration"));
        }
        if self.grid_size < 2 {
            return Err(contract("rotation grid needs at least 2x2 nodes"));
        }
        if !(self.damping > 0.0) || !(0.0..=1.0).contains(&self.blend) {
            return Err(contract("damping must be positive and blend within [0, 1]"));
        }
        Ok(())
    }
}

/// Energy terms of one rotation grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Energy {
    pub total: f64,
    pub fitting: f64,
    pub smooth: f64,
}

/// Mean and maximum angle (degrees) between rotated avatar and observed
/// normals over the overlap.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ResidualStats {
    pub mean_deg: f64,
    pub max_deg: f64,
    pub pixels: usize,
}

/// Outcome of fusing one view.
#[derive(Clone, Debug)]
pub struct FusionResult {
    pub fused: NormalMap,
    pub grid: RotationGrid,
    /// Energy before the first step, then after every accepted step.
    pub trace: Vec<Energy>,
    pub residual_before: ResidualStats,
    pub residual_after: ResidualStats,
}

/// Pixels observed in both maps with their grid taps.
struct Overlap {
    taps: Vec<[(usize, f64); 4]>,
    avatar: Vec<Vec3>,
    image: Vec<Vec3>,
}

fn overlap(grid: &RotationGrid, f_avatar: &NormalMap, f_image: &NormalMap) -> Result<Overlap> {
    if !f_avatar.same_size(f_image) {
        return Err(contract("avatar and image maps differ in size"));
    }
    if grid.extent() != (f_avatar.width(), f_avatar.height()) {
        return Err(contract("rotation grid extent does not match the maps"));
    }
    let mut o = Overlap { taps: Vec::new(), avatar: Vec::new(), image: Vec::new() };
    for row in 0..f_avatar.height() {
        for col in 0..f_avatar.width() {
            if let (Some(a), Some(b)) = (f_avatar.get(col, row), f_image.get(col, row)) {
                o.taps.push(grid.weights_at(col as f64, row as f64)?);
                o.avatar.push(a);
                o.image.push(b);
            }
        }
    }
    if o.taps.is_empty() {
        return Err(Error::NoOverlap);
    }
    Ok(o)
}

fn blended(cells: &[Rot3], taps: &[(usize, f64); 4]) -> Mat3 {
    let mut m = Mat3::zeros();
    for &(i, w) in taps {
        m += cells[i].matrix() * w;
    }
    m
}

/// Undirected 4-neighbourhood edges of a `g x g` grid.
fn grid_edges(g: usize) -> Vec<(usize, usize)> {
    let mut e = Vec::with_capacity(2 * g * (g - 1));
    for y in 0..g {
        for x in 0..g {
            let i = y * g + x;
            if x + 1 < g {
                e.push((i, i + 1));
            }
            if y + 1 < g {
                e.push((i, i + g));
            }
        }
    }
    e
}

fn log_cells(cells: &[Rot3]) -> Result<Vec<Vec3>> {
    cells.iter().map(rod_inv).collect()
}

fn energy_of(cells: &[Rot3], o: &Overlap, g: usize, cfg: &FusionConfig) -> Result<Energy> {
    let mut fitting = 0.0;
    for ((taps, a), b) in o.taps.iter().zip(&o.avatar).zip(&o.image) {
        fitting += (blended(cells, taps) * a - b).norm_squared();
    }
    let phi = log_cells(cells)?;
    // Every undirected edge appears twice in the double sum over N(i).
    let smooth: f64 = grid_edges(g).iter().map(|&(i, j)| 2.0 * (phi[i] - phi[j]).norm_squared()).sum();
    Ok(Energy { total: cfg.lambda_fitting * fitting + cfg.lambda_smooth * smooth, fitting, smooth })
}

/// `E = l_fit sum_D |R(p) F_avatar(p) - F_image(p)|^2 + l_smooth sum_i sum_{j in N4(i)} |Rod(R_i) - Rod(R_j)|^2`.
pub fn energy(grid: &RotationGrid, f_avatar: &NormalMap, f_image: &NormalMap, cfg: &FusionConfig) -> Result<Energy> {
    let o = overlap(grid, f_avatar, f_image)?;
    energy_of(grid.cells(), &o, grid.size(), cfg)
}

/// Adds block `m` at cell rows `ci`, cell columns `cj` of the symmetric system.
fn add_block(h: &mut BandedSpd, ci: usize, cj: usize, m: &Mat3) {
    for a in 0..3 {
        for c in 0..3 {
            if ci != cj || a >= c {
                h.add(3 * ci + a, 3 * cj + c, m[(a, c)]);
            }
        }
    }
}

/// Gauss-Newton normal equations `(J^T J, -J^T r)` at `cells`, with the
/// smoothness Jacobians taken through the inverse left Jacobian of each log.
fn assemble(cells: &[Rot3], o: &Overlap, g: usize, edges: &[(usize, usize)], cfg: &FusionConfig) -> Result<(BandedSpd, Vec<f64>)> {
    let n = 3 * g * g;
    let bandwidth = 3 * (g + 1) + 2;
    let mut h = BandedSpd::zeros(n, bandwidth);
    let mut rhs = vec![0.0; n];
    let lf = cfg.lambda_fitting;
    for ((taps, a), b) in o.taps.iter().zip(&o.avatar).zip(&o.image) {
        let u: [Vec3; 4] = std::array::from_fn(|s| cells[taps[s].0].apply(a));
        let r = taps.iter().zip(&u).fold(-b, |acc, (&(_, w), us)| acc + us * w);
        for s in 0..4 {
            let (cs, ws) = taps[s];
            if ws == 0.0 {
                continue;
            }
            // J_s = -w_s [u_s]x, so J_s^T r = w_s u_s x r.
            let gs = u[s].cross(&r) * (lf * ws);
            for k in 0..3 {
                rhs[3 * cs + k] -= gs[k];
            }
            for t in 0..4 {
                let (ct, wt) = taps[t];
                if wt == 0.0 || ct > cs {
                    continue;
                }
                // J_s^T J_t = w_s w_t ((u_s . u_t) I - u_t u_s^T).
                let m = (Mat3::identity() * u[s].dot(&u[t]) - u[t] * u[s].transpose()) * (lf * ws * wt);
                add_block(&mut h, cs, ct, &m);
            }
        }
    }
    let phi = log_cells(cells)?;
    let jinv: Vec<Mat3> = phi.iter().map(left_jacobian_inv).collect();
    let ls = 2.0 * cfg.lambda_smooth;
    for &(i, j) in edges {
        let r = phi[i] - phi[j];
        let gi = jinv[i].transpose() * r * ls;
        let gj = jinv[j].transpose() * r * ls;
        for k in 0..3 {
            rhs[3 * i + k] -= gi[k];
            rhs[3 * j + k] += gj[k];
        }
        add_block(&mut h, i, i, &(jinv[i].transpose() * jinv[i] * ls));
        add_block(&mut h, j, j, &(jinv[j].transpose() * jinv[j] * ls));
        // Block (j, i) = -J_j^T J_i; j > i for every listed edge.
        add_block(&mut h, j, i, &(jinv[j].transpose() * jinv[i] * -ls));
    }
    Ok((h, rhs))
}

fn residual_stats(cells: &[Rot3], o: &Overlap) -> ResidualStats {
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    for ((taps, a), b) in o.taps.iter().zip(&o.avatar).zip(&o.image) {
        let d = angle_between(&(blended(cells, taps) * a), b).to_degrees();
        sum += d;
        max = max.max(d);
    }
    ResidualStats { mean_deg: sum / o.taps.len() as f64, max_deg: max, pixels: o.taps.len() }
}

/// Gauss-Newton over per-cell rotation increments `R_i <- exp(d_i) R_i`,
/// starting from identity. A step that raises the energy is retried with
/// ten times the damping; accepted steps relax the damping back towards
/// the configured value.
pub fn solve_rotations(f_avatar: &NormalMap, f_image: &NormalMap, cfg: &FusionConfig) -> Result<(RotationGrid, Vec<Energy>)> {
    cfg.validate()?;
    let g = cfg.grid_size;
    let mut grid = RotationGrid::identity(g, f_avatar.width(), f_avatar.height())?;
    let o = overlap(&grid, f_avatar, f_image)?;
    let edges = grid_edges(g);
    let mut current = energy_of(grid.cells(), &o, g, cfg)?;
    let mut trace = vec![current];
    let mut damping = cfg.damping;
    for _ in 0..cfg.iterations {
        if current.total == 0.0 {
            break;
        }
        let cells = grid.cells().to_vec();
        let (h, rhs) = assemble(&cells, &o, g, &edges, cfg)?;
        let mut accepted = None;
        for _ in 0..12 {
            let mut damped = h.clone();
            damped.add_diagonal(damping);
            let delta = damped.solve(&rhs, damping)?;
            let candidate: Vec<Rot3> = cells
                .iter()
                .enumerate()
                .map(|(i, c)| rodrigues(&Vec3::new(delta[3 * i], delta[3 * i + 1], delta[3 * i + 2])).compose(c))
                .collect();
            let e = energy_of(&candidate, &o, g, cfg)?;
            if e.total <= current.total {
                accepted = Some((candidate, e));
                damping = (damping * 0.1).max(cfg.damping);
                break;
            }
            damping *= 10.0;
        }
        let Some((cells, e)) = accepted else { break };
        grid.cells_mut().copy_from_slice(&cells);
        let decrease = (current.total - e.total) / current.total;
        current = e;
        trace.push(e);
        if decrease < cfg.min_relative_decrease {
            break;
        }
    }
    Ok((grid, trace))
}

/// Second phase: on the overlap the fused normal is
/// `normalize(b R(p)^T F_image(p) + (1 - b) F_avatar(p))` with blend `b`;
/// elsewhere inside the avatar mask the avatar normal is kept.
pub fn fuse_map(f_avatar: &NormalMap, f_image: &NormalMap, grid: &RotationGrid, cfg: &FusionConfig) -> Result<NormalMap> {
    if !f_avatar.same_size(f_image) || grid.extent() != (f_avatar.width(), f_avatar.height()) {
        return Err(contract("maps and rotation grid differ in size"));
    }
    let mut out = NormalMap::invalid(f_avatar.width(), f_avatar.height());
    for row in 0..f_avatar.height() {
        for col in 0..f_avatar.width() {
            let Some(a) = f_avatar.get(col, row) else { continue };
            let n = match f_image.get(col, row) {
                Some(b) => {
                    let r = grid.rotation_at(col as f64, row as f64)?;
                    let v = (r.transpose() * b) * cfg.blend + a * (1.0 - cfg.blend);
                    if v.norm() > 1e-12 {
                        v.normalize()
                    } else {
                        a
                    }
                }
                None => a,
            };
            out.set(col, row, Some(n));
        }
    }
    Ok(out)
}

/// Both phases for one view. A view whose observation has no valid pixel
/// passes the avatar map through unchanged.
pub fn fuse_view(f_avatar: &NormalMap, f_image: &NormalMap, cfg: &FusionConfig) -> Result<FusionResult> {
    cfg.validate()?;
    if !f_avatar.same_size(f_image) {
        return Err(contract("avatar and image maps differ in size"));
    }
    if f_image.valid_count() == 0 {
        return Ok(FusionResult {
            fused: f_avatar.clone(),
            grid: RotationGrid::identity(cfg.grid_size, f_avatar.width(), f_avatar.height())?,
            trace: Vec::new(),
            residual_before: ResidualStats::default(),
            residual_after: ResidualStats::default(),
        });
    }
    let (grid, trace) = solve_rotations(f_avatar, f_image, cfg)?;
    let o = overlap(&grid, f_avatar, f_image)?;
    let identity = vec![Rot3::identity(); grid.cells().len()];
    Ok(FusionResult {
        fused: fuse_map(f_avatar, f_image, &grid, cfg)?,
        residual_before: residual_stats(&identity, &o),
        residual_after: residual_stats(grid.cells(), &o),
        grid,
        trace,
    })
}

/// Fuses the front and back views independently.
pub fn fuse(
    f_avatar: &NormalMap,
    b_avatar: &NormalMap,
    f_image: &NormalMap,
    b_image: &NormalMap,
    cfg: &FusionConfig,
) -> Result<(FusionResult, FusionResult)> {
    Ok((fuse_view(f_avatar, f_image, cfg)?, fuse_view(b_avatar, b_image, cfg)?))
}

/// The energy trace as CSV with header `iteration,E,E_fitting,E_smooth`.
pub fn energy_csv(trace: &[Energy]) -> String {
    let mut s = String::from("iteration,E,E_fitting,E_smooth\n");
    for (i, e) in trace.iter().enumerate() {
        let _ = writeln!(s, "{i},{:e},{:e},{:e}", e.total, e.fitting, e.smooth);
    }
    s
}

#[cfg(test)]
mod tests;
