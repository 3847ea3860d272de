use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nets::{FieldGrad, GeoTexNets, PoseInput};
use super::render::{composite, composite_backward, ray_box, stratified_samples};
use crate::bodymodel::{canonicalize_points, forward_skin_with, ArticulatedBody, Pose};
use crate::difffield::{bce, bce_grad, Adam, AdamConfig, Params, TrainConfig};
use crate::error::{contract, Error, Result};
use crate::geomath::Vec3;
use crate::synthcorpus::{derive_seed, ScanRecord, ROUND_TRIP_TOLERANCE};

impl Params for GeoTexNets {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
        self.template.visit_params(f);
        self.warp.visit_params(f);
    }

    fn param_count(&self) -> usize {
        self.template.param_count() + self.warp.param_count()
    }
}

/// How training rays are drawn from a scan's colour views.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RayPoolConfig {
    /// Rays precomputed per scan; each step draws from this pool.
    pub rays: usize,
    /// Share of pool rays through background pixels (target colour black).
    pub background_fraction: f64,
    /// Padding of the posed bounding box that bounds every ray (meters).
    pub margin: f64,
}

impl Default for RayPoolConfig {
    fn default() -> Self {
        Self { rays: 1024, background_fraction: 0.2, margin: 0.05 }
    }
}

/// A training ray with its samples already mapped to canonical space.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedRay {
    pub canonical: Vec<Option<Vec3>>,
    pub deltas: Vec<f64>,
    pub target: Vec3,
}

/// Per-scan training data in the form the loss consumes.
#[derive(Clone, Debug)]
pub struct PreparedScan {
    pub pose: Pose,
    pub input: PoseInput,
    pub points: Vec<Vec3>,
    pub labels: Vec<f64>,
    pub rays: Vec<PreparedRay>,
}

/// Box around the posed rest surface.
pub fn posed_bounds(body: &ArticulatedBody, pose: &Pose, margin: f64) -> Result<(Vec3, Vec3)> {
    let posed = forward_skin_with(&body.transforms(pose)?, &body.mesh().vertices, body.vertex_weights())?;
    let mut lo = Vec3::from([f64::INFINITY; 3]);
    let mut hi = Vec3::from([f64::NEG_INFINITY; 3]);
    for p in &posed {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let m = Vec3::from([margin; 3]);
    Ok((lo - m, hi + m))
}

/// Builds the ray pool of a scan: pixel rays clipped to the posed box,
/// stratified samples, and their canonical positions.
pub fn prepare_scan(
    nets: &GeoTexNets,
    body: &ArticulatedBody,
    record: &ScanRecord,
    samples_per_ray: usize,
    pool: &RayPoolConfig,
    rng: &mut impl Rng,
) -> Result<PreparedScan> {
    if samples_per_ray < 2 {
        return Err(contract("need at least two samples per ray"));
    }
    if !(0.0..=1.0).contains(&pool.background_fraction) {
        return Err(contract("background fraction must lie in [0, 1]"));
    }
    let input = nets.pose_input(body, &record.pose)?;
    let transforms = body.transforms(&record.pose)?;
    let (lo, hi) = posed_bounds(body, &record.pose, pool.margin)?;
    let mut foreground = Vec::new();
    let mut background = Vec::new();
    for (v, view) in record.views.iter().enumerate() {
        let w = view.camera.plane.width;
        for (i, &m) in view.mask.iter().enumerate() {
            let (o, d) = view.camera.ray(i % w, i / w);
            if let Some((t0, t1)) = ray_box(&o, &d, &lo, &hi) {
                if m {
                    foreground.push((v, i, t0, t1))
                } else {
                    background.push((v, i, t0, t1))
                }
            }
        }
    }
    let n_bg = if background.is_empty() { 0 } else { (pool.rays as f64 * pool.background_fraction).round() as usize };
    let n_fg = if foreground.is_empty() { 0 } else { pool.rays - n_bg };
    let mut chosen = Vec::with_capacity(n_fg + n_bg);
    for _ in 0..n_fg {
        chosen.push(foreground[rng.random_range(0..foreground.len())]);
    }
    for _ in 0..n_bg {
        chosen.push(background[rng.random_range(0..background.len())]);
    }
    let mut rays = Vec::with_capacity(chosen.len());
    for (v, i, t0, t1) in chosen {
        let view = &record.views[v];
        let w = view.camera.plane.width;
        let (o, d) = view.camera.ray(i % w, i / w);
        let (ts, deltas) = stratified_samples(t0, t1, samples_per_ray, Some(rng));
        let posed: Vec<Vec3> = ts.iter().map(|t| o + d * *t).collect();
        rays.push(PreparedRay {
            canonical: canonicalize_points(body, &transforms, &posed, ROUND_TRIP_TOLERANCE)?,
            deltas,
            target: view.rgb[i],
        });
    }
    Ok(PreparedScan { pose: record.pose.clone(), input, points: record.points.points.clone(), labels: record.points.labels.clone(), rays })
}

/// Loss weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub geo: f64,
    pub tex: f64,
    pub reg: f64,
}

impl From<&TrainConfig> for LossWeights {
    fn from(c: &TrainConfig) -> Self {
        Self { geo: c.lambda_geo, tex: c.lambda_tex, reg: c.lambda_reg }
    }
}

/// Loss terms (unweighted means) and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossParts {
    pub total: f64,
    pub geo: f64,
    pub tex: f64,
    pub reg: f64,
}

/// One scan's share of an optimisation step.
#[derive(Clone, Debug)]
pub struct Microbatch<'a> {
    pub input: &'a PoseInput,
    pub points: Vec<Vec3>,
    pub labels: Vec<f64>,
    pub rays: Vec<&'a PreparedRay>,
}

/// Weighted sum of the mean occupancy BCE over the points, the mean squared
/// colour error over the rays, and the mean squared offset over points and
/// valid ray samples.
pub fn loss_total(nets: &GeoTexNets, batch: &[Microbatch], w: &LossWeights) -> Result<LossParts> {
    Ok(evaluate(nets, batch, w, false)?.0)
}

/// [`loss_total`] plus parameter gradients (previous gradients are cleared).
/// With `train_warp` false the warp field receives no gradient.
pub fn loss_and_grad(nets: &mut GeoTexNets, batch: &[Microbatch], w: &LossWeights, train_warp: bool) -> Result<LossParts> {
    let (parts, tapes) = evaluate(nets, batch, w, true)?;
    nets.zero_grad();
    for (tape, grad) in &tapes {
        nets.field_backward(tape, grad, train_warp)?;
    }
    Ok(parts)
}

type Taped = (super::nets::FieldTape, FieldGrad);

fn evaluate(nets: &GeoTexNets, batch: &[Microbatch], w: &LossWeights, grads: bool) -> Result<(LossParts, Vec<Taped>)> {
    let n_points: usize = batch.iter().map(|m| m.points.len()).sum();
    let n_rays: usize = batch.iter().map(|m| m.rays.len()).sum();
    let n_samples: usize = batch.iter().flat_map(|m| &m.rays).map(|r| r.canonical.iter().flatten().count()).sum();
    if n_points + n_rays == 0 {
        return Err(contract("loss needs at least one point or ray"));
    }
    let n_reg = n_points + n_samples;
    let mut sums = LossParts::default();
    let mut tapes = Vec::new();
    for m in batch {
        if m.points.len() != m.labels.len() {
            return Err(contract("points and labels differ in length"));
        }
        let mut pts = m.points.clone();
        for r in &m.rays {
            if r.canonical.len() != r.deltas.len() {
                return Err(contract("ray samples and spacings differ in length"));
            }
            pts.extend(r.canonical.iter().flatten());
        }
        let color_rows = pts.len() - m.points.len();
        if pts.is_empty() {
            continue;
        }
        let (out, tape) = nets.field_forward(&pts, m.input, color_rows)?;
        let mut g = FieldGrad {
            offsets: vec![Vec3::zeros(); pts.len()],
            occupancy: vec![0.0; pts.len()],
            density: vec![0.0; pts.len()],
            colors: vec![Vec3::zeros(); color_rows],
        };
        for (i, &y) in m.labels.iter().enumerate() {
            sums.geo += bce(out.occupancy[i], y);
            g.occupancy[i] = w.geo * bce_grad(out.occupancy[i], y) / n_points as f64;
        }
        let mut row = m.points.len();
        for r in &m.rays {
            let k = r.canonical.len();
            let mut sigma = vec![0.0; k];
            let mut colors = vec![Vec3::zeros(); k];
            let mut rows = vec![None; k];
            for (s, c) in r.canonical.iter().enumerate() {
                if c.is_some() {
                    sigma[s] = out.density[row];
                    colors[s] = out.colors[row - m.points.len()];
                    rows[s] = Some(row);
                    row += 1;
                }
            }
            let (color, _) = composite(&sigma, &r.deltas, &colors)?;
            let err = color - r.target;
            sums.tex += err.norm_squared();
            if grads {
                let gc = err * (2.0 * w.tex / n_rays as f64);
                let (g_sigma, g_color) = composite_backward(&sigma, &r.deltas, &colors, &gc);
                for s in 0..k {
                    if let Some(i) = rows[s] {
                        g.density[i] = g_sigma[s];
                        g.colors[i - m.points.len()] = g_color[s];
                    }
                }
            }
        }
        for (i, o) in out.offsets.iter().enumerate() {
            sums.reg += o.norm_squared();
            g.offsets[i] = o * (2.0 * w.reg / n_reg as f64);
        }
        if grads {
            tapes.push((tape, g));
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    let parts = LossParts { geo: mean(sums.geo, n_points), tex: mean(sums.tex, n_rays), reg: mean(sums.reg, n_reg), total: 0.0 };
    Ok((LossParts { total: w.geo * parts.geo + w.tex * parts.tex + w.reg * parts.reg, ..parts }, tapes))
}

/// Mean losses over one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: LossParts,
    pub warp_trained: bool,
}

#[derive(Clone, Debug)]
pub struct TrainedAvatar {
    pub nets: GeoTexNets,
    pub history: Vec<EpochStats>,
    /// Losses of the very first step, before any update.
    pub initial: LossParts,
}

/// Optimises the avatar on the scans with two Adam groups (template, warp),
/// freezing the warp for the first epochs. Rays are skipped entirely when
/// the texture weight is zero.
pub fn train_avatar(
    mut nets: GeoTexNets,
    body: &ArticulatedBody,
    records: &[ScanRecord],
    cfg: &TrainConfig,
    pool: &RayPoolConfig,
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainedAvatar> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(contract("training needs at least one scan"));
    }
    let use_rays = cfg.lambda_tex > 0.0;
    let ray_pool = if use_rays { *pool } else { RayPoolConfig { rays: 0, ..*pool } };
    let scans = records
        .iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, r.seed));
            prepare_scan(&nets, body, r, cfg.samples_per_ray, &ray_pool, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = LossWeights::from(cfg);
    let adam = |lr| AdamConfig { lr, decay_every: cfg.decay_every, ..AdamConfig::default() };
    let mut opt_template = Adam::new(&nets.template, adam(cfg.lr_template));
    let mut opt_warp = Adam::new(&nets.warp, adam(cfg.lr_warp));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut initial = None;
    let mut iteration = 0;
    for epoch in 0..cfg.epochs {
        let train_warp = epoch >= cfg.warp_freeze_epochs;
        let mut acc = LossParts::default();
        for _ in 0..cfg.iters_per_epoch {
            let mut picks = Vec::with_capacity(cfg.batch_size);
            while picks.len() < cfg.batch_size.min(scans.len()) {
                if order.is_empty() {
                    order = (0..scans.len()).collect();
                    order.shuffle(&mut rng);
                }
                picks.push(order.pop().unwrap());
            }
            let batch: Vec<Microbatch> = picks.iter().map(|&s| draw(&scans[s], cfg, use_rays, &mut rng)).collect();
            let parts = loss_and_grad(&mut nets, &batch, &weights, train_warp)?;
            if ![parts.total, parts.geo, parts.tex, parts.reg].iter().all(|v| v.is_finite()) {
                return Err(Error::Divergence {
                    iteration,
                    detail: format!("non-finite loss (geo {}, tex {}, reg {})", parts.geo, parts.tex, parts.reg),
                });
            }
            initial.get_or_insert(parts);
            opt_template.step(&mut nets.template);
            if train_warp {
                opt_warp.step(&mut nets.warp);
            }
            acc.total += parts.total;
            acc.geo += parts.geo;
            acc.tex += parts.tex;
            acc.reg += parts.reg;
            iteration += 1;
        }
        let n = cfg.iters_per_epoch.max(1) as f64;
        let stats = EpochStats {
            epoch,
            loss: LossParts { total: acc.total / n, geo: acc.geo / n, tex: acc.tex / n, reg: acc.reg / n },
            warp_trained: train_warp,
        };
        progress(&stats);
        history.push(stats);
    }
    Ok(TrainedAvatar { nets, history, initial: initial.unwrap_or_default() })
}

fn draw<'a>(scan: &'a PreparedScan, cfg: &TrainConfig, use_rays: bool, rng: &mut ChaCha8Rng) -> Microbatch<'a> {
    let n = scan.points.len();
    let picks = index::sample(rng, n, cfg.points_per_scan.min(n));
    let rays = if use_rays && !scan.rays.is_empty() {
        (0..cfg.rays_per_scan).map(|_| &scan.rays[rng.random_range(0..scan.rays.len())]).collect()
    } else {
        Vec::new()
    };
    Microbatch {
        input: &scan.input,
        points: picks.iter().map(|i| scan.points[i]).collect(),
        labels: picks.iter().map(|i| scan.labels[i]).collect(),
        rays,
    }
}
