//! Acceptance metrics. Every number the acceptance suite checks is computed
//! here; the `eval` subcommand and the tests only report it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use volcap::bodymodel::{forward_skin, inverse_skin, Pose};
use volcap::difffield::{Params, TrainConfig};
use volcap::geomath::{
    geodesic_angle, hausdorff, highpass, marching_cubes, ortho_render_normals, ImagePlane, NormalMap, RotationGrid, ScalarGrid,
    SurfaceIndex, Vec3, View,
};
use volcap::geotexavatar::{
    animate, boundary_height, composite, composite_backward, correspondence_labels, loss_and_grad, loss_total, posed_bounds, ray_box,
    stratified_samples, template_mesh, train_avatar, volume_render, AvatarArch, FieldGrad, GeoTexNets, LossWeights, Microbatch,
    PoseEncoderKind, PreparedRay, Ray,
};
use volcap::normalfusion::{energy, fuse_view, scenarios, FusionConfig};
use volcap::reconnet::{occupancy_grid, recon_eval, reconstruct, silhouette_iou, train_recon, voxel_iou, ReconArch, ReconNets};
use volcap::synthcorpus::{generate_corpus, sample_pose, toy_pose_ranges, Corpus, PointSampling, ScanSettings, SyntheticSubject};

use crate::config::{FusionMode, PipelineConfig, SubjectPreset};
use crate::error::{CliError, CliResult};
use crate::pipeline::{self, capture_frame, synth_frame, Context};

pub const CRITERIA: [u8; 8] = [1, 2, 3, 4, 5, 6, 7, 8];

/// How a metric value is compared against its threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl Op {
    fn symbol(self) -> &'static str {
        match self {
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Ge => ">=",
            Op::Eq => "==",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub op: Op,
    pub threshold: f64,
}

impl Metric {
    pub fn new(name: impl Into<String>, value: f64, op: Op, threshold: f64) -> Self {
        Self { name: name.into(), value, op, threshold }
    }

    pub fn pass(&self) -> bool {
        match self.op {
            Op::Lt => self.value < self.threshold,
            Op::Le => self.value <= self.threshold,
            Op::Gt => self.value > self.threshold,
            Op::Ge => self.value >= self.threshold,
            Op::Eq => self.value == self.threshold,
        }
    }
}

/// Outcome of one acceptance criterion.
#[derive(Clone, Debug)]
pub struct Report {
    pub criterion: u8,
    pub title: &'static str,
    pub metrics: Vec<Metric>,
    pub seconds: f64,
}

impl Report {
    pub fn pass(&self) -> bool {
        !self.metrics.is_empty() && self.metrics.iter().all(Metric::pass)
    }

    /// One line: verdict, criterion, title and every metric.
    pub fn line(&self) -> String {
        let mut s = format!("{} [{}] {}:", if self.pass() { "PASS" } else { "FAIL" }, self.criterion, self.title);
        for m in &self.metrics {
            let _ = write!(s, " {}={:.6e}{}{:e}", m.name, m.value, m.op.symbol(), m.threshold);
        }
        let _ = write!(s, " ({:.1} s)", self.seconds);
        s
    }
}

pub fn title(criterion: u8) -> &'static str {
    match criterion {
        1 => "gradient suite",
        2 => "fusion recovery",
        3 => "decomposition on a static subject",
        4 => "texture supervision pins part boundaries",
        5 => "reconstruction fidelity",
        6 => "canonical fusion beats direct replacement",
        7 => "oracle equivalences",
        8 => "determinism",
        _ => "unknown",
    }
}

/// Machine-readable form: `criterion,metric,value,op,threshold,pass`.
pub fn to_csv(reports: &[Report]) -> String {
    let mut s = String::from("criterion,metric,value,op,threshold,pass\n");
    for r in reports {
        for m in &r.metrics {
            let _ = writeln!(s, "{},{},{:e},{},{:e},{}", r.criterion, m.name, m.value, m.op.symbol(), m.threshold, m.pass());
        }
    }
    s
}

/// Runs criteria on demand, training each shared model at most once.
pub struct Evaluator {
    base: PipelineConfig,
    scratch: PathBuf,
    log: Box<dyn Fn(&str) + Send + Sync>,
    corpus: OnceLock<Corpus>,
    recon: OnceLock<ReconNets>,
    avatar: OnceLock<GeoTexNets>,
}

impl Evaluator {
    /// `base` supplies the seed and model settings; `scratch` receives the
    /// determinism runs.
    pub fn new(base: PipelineConfig, scratch: impl Into<PathBuf>, log: impl Fn(&str) + Send + Sync + 'static) -> Self {
        Self { base, scratch: scratch.into(), log: Box::new(log), corpus: OnceLock::new(), recon: OnceLock::new(), avatar: OnceLock::new() }
    }

    pub fn run(&self, criterion: u8) -> CliResult<Report> {
        let start = Instant::now();
        let metrics = match criterion {
            1 => self.gradients()?,
            2 => self.fusion()?,
            3 => self.decomposition()?,
            4 => self.texture_supervision()?,
            5 => self.reconstruction()?,
            6 => self.end_to_end()?,
            7 => self.oracles()?,
            8 => self.determinism()?,
            _ => return Err(CliError::config(format!("no acceptance criterion {criterion}"))),
        };
        Ok(Report { criterion, title: title(criterion), metrics, seconds: start.elapsed().as_secs_f64() })
    }

    fn context(&self, preset: Option<SubjectPreset>) -> CliResult<Context> {
        let mut cfg = self.base.clone();
        if preset.is_some() {
            cfg.corpus.preset = preset;
        }
        Context::new(cfg)
    }

    fn say(&self, msg: &str) {
        (self.log)(msg)
    }

    fn default_corpus(&self) -> CliResult<(&Corpus, Context)> {
        let ctx = self.context(None)?;
        if self.corpus.get().is_none() {
            self.say("generating corpus");
            let _ = self.corpus.set(generate_corpus(&ctx.body, &ctx.cfg.corpus.corpus)?);
        }
        Ok((self.corpus.get().expect("set above"), ctx))
    }

    fn trained_recon(&self) -> CliResult<&ReconNets> {
        if let Some(n) = self.recon.get() {
            return Ok(n);
        }
        let (corpus, ctx) = self.default_corpus()?;
        let trained =
            train_recon(ctx.new_recon()?, &corpus.train, &ctx.cfg.recon.train, |e, l| self.say(&format!("recon epoch {e} loss {l:.5}")))?;
        let _ = self.recon.set(trained.nets);
        Ok(self.recon.get().expect("set above"))
    }

    fn trained_avatar(&self) -> CliResult<&GeoTexNets> {
        if let Some(n) = self.avatar.get() {
            return Ok(n);
        }
        let (corpus, ctx) = self.default_corpus()?;
        let nets = self.train_avatar(&ctx, corpus, &ctx.cfg.avatar.train)?;
        let _ = self.avatar.set(nets);
        Ok(self.avatar.get().expect("set above"))
    }

    fn train_avatar(&self, ctx: &Context, corpus: &Corpus, train: &TrainConfig) -> CliResult<GeoTexNets> {
        let trained = train_avatar(ctx.new_avatar()?, &ctx.body, &corpus.train, train, &ctx.cfg.avatar.rays, |s| {
            self.say(&format!("avatar epoch {} loss {:.5}", s.epoch, s.loss.total))
        })?;
        Ok(trained.nets)
    }

    fn gradients(&self) -> CliResult<Vec<Metric>> {
        let start = Instant::now();
        let ctx = self.context(None)?;
        let suite = GradientSuite::new(&ctx, self.base.seed)?;
        let mut out = Vec::new();
        for (name, op) in GRADIENT_OPS {
            let err = suite.run(op)?;
            out.push(Metric::new(format!("fd_rel_error_{name}"), err, Op::Lt, 1e-4));
        }
        out.push(Metric::new("runtime_s", start.elapsed().as_secs_f64(), Op::Lt, 120.0));
        Ok(out)
    }

    fn fusion(&self) -> CliResult<Vec<Metric>> {
        let cfg = |g: usize| FusionConfig { grid_size: g, ..self.base.fusion.clone() };
        let constant = scenarios::constant_rotation(64, 8, 15.0);
        let c = fuse_view(&constant.avatar, &constant.image, &cfg(constant.grid_size))?;
        let worst = c.grid.cells().iter().zip(&constant.truth).map(|(a, b)| geodesic_angle(a, b).to_degrees()).fold(0.0, f64::max);

        let smooth = scenarios::smooth_rotation(128, 16);
        let s = fuse_view(&smooth.avatar, &smooth.image, &cfg(smooth.grid_size))?;
        let mean = s.grid.cells().iter().zip(&smooth.truth).map(|(a, b)| geodesic_angle(a, b).to_degrees()).sum::<f64>()
            / smooth.truth.len() as f64;
        let cosine = highpass(&s.fused, 3.0)?.cosine_similarity(&highpass(&smooth.image, 3.0)?, None);

        let desk_avatar = scenarios::dome(256, true);
        let desk_image = scenarios::map_with(&desk_avatar, |c, r, n| scenarios::smooth_field(c as f64 / 8.0, r as f64 / 8.0).apply(&n));
        let start = Instant::now();
        let d = fuse_view(&desk_avatar, &desk_image, &cfg(32))?;
        let seconds = start.elapsed().as_secs_f64();

        let rise = [&c.trace, &s.trace, &d.trace]
            .iter()
            .flat_map(|t| t.windows(2).skip(3).map(|w| w[1].total - w[0].total))
            .fold(f64::NEG_INFINITY, f64::max)
            .max(0.0);
        Ok(vec![
            Metric::new("constant_max_cell_error_deg", worst, Op::Lt, 0.5),
            Metric::new("smooth_mean_cell_error_deg", mean, Op::Lt, 2.0),
            Metric::new("smooth_highpass_cosine", cosine, Op::Gt, 0.9),
            Metric::new("energy_rise_after_iter3", rise, Op::Le, 0.0),
            Metric::new("solve_256_g32_s", seconds, Op::Lt, 30.0),
        ])
    }

    fn decomposition(&self) -> CliResult<Vec<Metric>> {
        let start = Instant::now();
        let ctx = self.context(Some(SubjectPreset::Static))?;
        self.say("generating static corpus");
        let corpus = generate_corpus(&ctx.body, &ctx.cfg.corpus.corpus)?;
        let nets = self.train_avatar(&ctx, &corpus, &ctx.cfg.avatar.train)?;
        let subject = ctx.subject()?;
        let limit = 0.1 * subject.params().wavelength;
        let probes = subject.canonical_mesh(&ctx.body.rest_pose(), 96)?.vertices;
        let poses: Vec<&Pose> = corpus.test_poses.iter().take(5).collect();
        let (mut inside, mut total) = (0usize, 0usize);
        for pose in &poses {
            let input = nets.pose_input(&ctx.body, pose)?;
            for o in nets.offsets(&probes, &input)? {
                inside += (o.norm() < limit) as usize;
                total += 1;
            }
        }
        let res = ctx.cfg.capture.avatar_resolution;
        let plane = ctx.canonical_plane();
        let a = animate(&nets, &ctx.body, poses[0], res, &plane)?.mesh;
        let b = animate(&nets, &ctx.body, poses[1], res, &plane)?.mesh;
        let voxel = ScalarGrid::canonical(res, 0.0)?.voxel();
        let h = hausdorff(&a, &b, 2.0 * voxel) / voxel;
        Ok(vec![
            Metric::new("probes_with_small_warp", inside as f64 / total as f64, Op::Ge, 0.95),
            Metric::new("hausdorff_two_poses_voxels", h, Op::Lt, 2.0),
            Metric::new("runtime_s", start.elapsed().as_secs_f64(), Op::Lt, 1200.0),
        ])
    }

    fn texture_supervision(&self) -> CliResult<Vec<Metric>> {
        let start = Instant::now();
        let ctx = self.context(Some(SubjectPreset::Sliding))?;
        self.say("generating sliding-stripe corpus");
        let corpus = generate_corpus(&ctx.body, &ctx.cfg.corpus.corpus)?;
        let with_tex = ctx.cfg.avatar.train.clone();
        let geo_only = TrainConfig { lambda_tex: 0.0, ..with_tex.clone() };
        let subject = ctx.subject()?;
        let drift = |train: &TrainConfig| -> CliResult<f64> {
            let nets = self.train_avatar(&ctx, &corpus, train)?;
            boundary_drift_variance(&ctx, &subject, &nets)
        };
        let tex = drift(&with_tex)?;
        let geo = drift(&geo_only)?;
        Ok(vec![
            Metric::new("boundary_variance_geo_tex", tex, Op::Lt, geo),
            Metric::new("runtime_s", start.elapsed().as_secs_f64(), Op::Lt, 2700.0),
        ])
    }

    fn reconstruction(&self) -> CliResult<Vec<Metric>> {
        let nets = self.trained_recon()?;
        let (corpus, ctx) = self.default_corpus()?;
        let subject = ctx.subject()?;
        let plane = ctx.canonical_plane();
        let n = 128;
        let (mut iou, mut sil) = (f64::INFINITY, f64::INFINITY);
        for pose in corpus.test_poses.iter().take(5) {
            let truth = subject.canonical_mesh(pose, n)?;
            let front = ortho_render_normals(&truth, &plane, View::Front);
            let back = ortho_render_normals(&truth, &plane, View::Back);
            let pred = occupancy_grid(nets, &front, &back, n)?;
            let gt = ScalarGrid::from_fn(n, pred.origin(), pred.voxel(), |p| subject.occupancy(p, pose))?;
            iou = iou.min(voxel_iou(pred.values(), gt.values())?);
            let rec = reconstruct(nets, &front, &back, pose, &ctx.body, n)?;
            sil = sil.min(silhouette_iou(&rec.canonical, &front, &plane)?);
        }
        Ok(vec![Metric::new("min_voxel_iou_n128", iou, Op::Gt, 0.9), Metric::new("min_silhouette_iou", sil, Op::Gt, 0.95)])
    }

    fn end_to_end(&self) -> CliResult<Vec<Metric>> {
        let recon = self.trained_recon()?;
        let avatar = self.trained_avatar()?;
        let (corpus, ctx) = self.default_corpus()?;
        let subject = ctx.subject()?;
        let (mut fused, mut replaced) = (0.0, 0.0);
        let frames = 3.min(corpus.test_poses.len());
        for (k, pose) in corpus.test_poses.iter().take(frames).enumerate() {
            let (frame, truth) = synth_frame(&ctx, &subject, pose, k)?;
            let index = SurfaceIndex::new(&truth, 0.05);
            let error = |mode| -> CliResult<f64> {
                let out = capture_frame(&ctx, avatar, recon, &frame, mode)?;
                Ok(mean_distance(&index, &out.reconstruction.posed.vertices))
            };
            let (f, r) = (error(FusionMode::Fuse)?, error(FusionMode::Replace)?);
            self.say(&format!("frame {k}: fusion {f:.5} m, replacement {r:.5} m"));
            fused += f / frames as f64;
            replaced += r / frames as f64;
        }
        Ok(vec![Metric::new("vertex_to_surface_fusion_m", fused, Op::Lt, replaced)])
    }

    fn oracles(&self) -> CliResult<Vec<Metric>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.base.seed);
        let mut energy_err: f64 = 0.0;
        for g in [2, 3, 5] {
            let a = scenarios::dome(8, true);
            let b = scenarios::map_with(&scenarios::dome(8, false), |c, r, n| n + Vec3::new(0.1 * (c as f64).sin(), 0.05 * r as f64, 0.0));
            let mut grid = RotationGrid::identity(g, 8, 8)?;
            for cell in grid.cells_mut() {
                *cell = scenarios::axis_angle(random_unit(&mut rng), rng.random_range(0.0..140.0));
            }
            let cfg = FusionConfig { lambda_fitting: 0.7, lambda_smooth: 1.3, grid_size: g, ..FusionConfig::default() };
            let fast = energy(&grid, &a, &b, &cfg)?;
            let slow = scenarios::reference_energy(&grid, &a, &b, &cfg)?;
            for (x, y) in [(fast.total, slow.total), (fast.fitting, slow.fitting), (fast.smooth, slow.smooth)] {
                energy_err = energy_err.max((x - y).abs() / y.abs().max(1.0));
            }
        }

        let center = Vec3::new(0.013, -0.021, 0.007);
        let grid = ScalarGrid::from_fn(64, Vec3::new(-0.4, -0.4, -0.4), 0.8 / 63.0, |p| (p - center).norm() - 0.25)?;
        let sphere = marching_cubes(&grid, 0.0)?;
        let mc_err = sphere.vertices.iter().map(|v| ((v - center).norm() - 0.25).abs()).fold(0.0, f64::max) / grid.voxel();

        let body = Context::new(self.base.clone())?.body;
        let mesh = body.mesh();
        let pts: Vec<Vec3> = (0..2000)
            .map(|_| {
                let [a, b, c] = mesh.corners(rng.random_range(0..mesh.triangles.len()));
                let (u, v): (f64, f64) = (rng.random(), rng.random());
                let (u, v) = if u + v > 1.0 { (1.0 - u, 1.0 - v) } else { (u, v) };
                a + (b - a) * u + (c - a) * v
            })
            .collect();
        let weights = body.weights_for(&pts);
        let mut skin_err: f64 = 0.0;
        for _ in 0..5 {
            let pose = sample_pose(&body, &toy_pose_ranges(), &mut rng)?;
            let posed = forward_skin(&body, &pose, &pts, &weights)?;
            for (p, q) in pts.iter().zip(inverse_skin(&body, &pose, &posed, &weights)?) {
                skin_err = skin_err.max(q.map_or(f64::INFINITY, |q| (p - q).norm()));
            }
        }

        let ln2 = std::f64::consts::LN_2;
        let (c1, c2) = (Vec3::new(0.2, 0.4, 0.8), Vec3::new(1.0, 0.5, 0.25));
        let (c, _) = composite(&[ln2, 2.0 * ln2], &[1.0, 0.5], &[c1, c2])?;
        let render_err = (c - (c1 * 0.5 + c2 * 0.25)).amax();
        Ok(vec![
            Metric::new("energy_vs_reference_rel", energy_err, Op::Lt, 1e-10),
            Metric::new("mc_sphere_max_error_voxels", mc_err, Op::Lt, 1.5),
            Metric::new("skinning_round_trip_m", skin_err, Op::Lt, 1e-9),
            Metric::new("two_sample_render_error", render_err, Op::Eq, 0.0),
        ])
    }

    fn determinism(&self) -> CliResult<Vec<Metric>> {
        let runs: Vec<PathBuf> = ["run_a", "run_b"].iter().map(|r| self.scratch.join(r)).collect();
        for dir in &runs {
            if dir.exists() {
                std::fs::remove_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            }
            self.say(&format!("tiny pipeline in {}", dir.display()));
            run_full_pipeline(&tiny_config(dir, self.base.seed))?;
        }
        let (files, differing) = compare_trees(&runs[0], &runs[1])?;
        Ok(vec![Metric::new("artifacts", files as f64, Op::Gt, 0.0), Metric::new("differing_artifacts", differing as f64, Op::Eq, 0.0)])
    }
}

/// Every subcommand of the pipeline in order, as the CLI runs them.
pub fn run_full_pipeline(cfg: &PipelineConfig) -> CliResult<()> {
    let ctx = Context::new(cfg.clone())?;
    pipeline::cmd_synth_corpus(&ctx)?;
    pipeline::cmd_train_avatar(&ctx, |_| {})?;
    pipeline::cmd_train_recon(&ctx, |_| {})?;
    pipeline::cmd_animate(&ctx, &[])?;
    pipeline::cmd_fuse_normals(&ctx, &[])?;
    pipeline::cmd_reconstruct(&ctx, &[])?;
    pipeline::cmd_texgen(&ctx, &[])?;
    pipeline::cmd_capture(&ctx, &[], 2, true)?;
    Ok(())
}

/// A seconds-scale configuration exercising every stage.
pub fn tiny_config(workdir: &Path, seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig { workdir: workdir.to_path_buf(), seed, ..PipelineConfig::default() };
    cfg.body.resolution = 32;
    let c = &mut cfg.corpus.corpus;
    c.train_scans = 2;
    c.test_poses = 2;
    c.scan = ScanSettings { views: 2, resolution: 40, image_size: 16, half_extent: 1.0 };
    c.points = PointSampling { n_surface: 300, n_uniform: 100, ..PointSampling::default() };
    c.map_width = 16;
    cfg.avatar.arch = AvatarArch {
        posenc_order: 3,
        trunk_width: 16,
        trunk_layers: 2,
        head_width: 8,
        warp_width: 8,
        warp_layers: 2,
        ..AvatarArch::default()
    };
    cfg.avatar.train = TrainConfig {
        epochs: 2,
        iters_per_epoch: 2,
        warp_freeze_epochs: 1,
        points_per_scan: 64,
        rays_per_scan: 4,
        samples_per_ray: 8,
        ..TrainConfig::default()
    };
    cfg.avatar.rays.rays = 32;
    cfg.recon.arch = ReconArch { channels: [4, 6, 6, 5], decoder_width: 12, decoder_layers: 2, z_order: 2, ..ReconArch::default() };
    cfg.recon.train.epochs = 4;
    cfg.recon.train.steps_per_epoch = 60;
    cfg.recon.train.lr = 1e-2;
    cfg.recon.train.points_per_scan = 64;
    cfg.recon.train.monitor_points = 64;
    cfg.fusion.grid_size = 4;
    cfg.fusion.iterations = 5;
    let cap = &mut cfg.capture;
    cap.observation_size = 48;
    cap.observation_resolution = 40;
    cap.avatar_resolution = 24;
    cap.recon_resolution = 24;
    cap.texture_samples = 4;
    cfg
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("walk stays under the root").to_path_buf());
        }
    }
    Ok(())
}

/// Number of files under `a` and how many of them are missing from `b` or
/// differ byte-wise (files only in `b` count as differing too).
pub fn compare_trees(a: &Path, b: &Path) -> CliResult<(usize, usize)> {
    let (mut fa, mut fb) = (Vec::new(), Vec::new());
    collect_files(a, a, &mut fa)?;
    collect_files(b, b, &mut fb)?;
    fa.sort();
    fb.sort();
    let mut differing = fb.iter().filter(|f| !fa.contains(f)).count();
    for rel in &fa {
        let read = |root: &Path| std::fs::read(root.join(rel)).ok();
        if read(a) != read(b) || read(a).is_none() {
            differing += 1;
        }
    }
    Ok((fa.len(), differing))
}

fn mean_distance(index: &SurfaceIndex, points: &[Vec3]) -> f64 {
    let sum: f64 = points.iter().map(|p| index.distance(p).unwrap_or(f64::INFINITY)).sum();
    sum / points.len().max(1) as f64
}

fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm() > 0.1 && v.norm() <= 1.0 {
            return v.normalize();
        }
    }
}

/// Canonical height of the stripe boundary the avatar associates with the
/// template boundary at `PLANE` on the trunk front, relative to where the
/// subject's stripes actually are. Its variance over spine poses measures
/// how far the learned correspondence drifts.
const PLANE: f64 = -0.25;
const TRUNK_HALF_WIDTH: f64 = 0.14;
const SPINE_ANGLES: [f64; 5] = [-0.4, -0.2, 0.0, 0.2, 0.4];

fn boundary_drift_variance(ctx: &Context, subject: &SyntheticSubject, nets: &GeoTexNets) -> CliResult<f64> {
    let res = 64;
    let template = template_mesh(nets, res)?;
    let spine = ctx.body.joint_index("spine").expect("toy body has a spine");
    let plane = ImagePlane::canonical(res, 2 * res);
    let mut drifts = Vec::with_capacity(SPINE_ANGLES.len());
    for a in SPINE_ANGLES {
        let mut pose = ctx.body.rest_pose();
        pose.set_joint(spine, Vec3::new(a, 0.0, 0.0));
        let input = nets.pose_input(&ctx.body, &pose)?;
        let mesh = animate(nets, &ctx.body, &pose, res, &plane)?.mesh;
        let labels = correspondence_labels(nets, &input, &mesh, &template, PLANE)?;
        let warped = nets.warp_points(&mesh.vertices, &input)?;
        let height = boundary_height(&mesh, &warped, &labels, PLANE, TRUNK_HALF_WIDTH)
            .ok_or_else(|| CliError::config("no label boundary crosses the trunk"))?;
        drifts.push(height - (PLANE - subject.slide(&pose)));
    }
    let mean = drifts.iter().sum::<f64>() / drifts.len() as f64;
    Ok(drifts.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / drifts.len() as f64)
}

const GRADIENT_OPS: [(&str, GradOp); 6] = [
    ("warp", GradOp::Warp),
    ("eval_geo", GradOp::Geo),
    ("eval_tex", GradOp::Tex),
    ("volume_render", GradOp::Render),
    ("loss_total", GradOp::Loss),
    ("recon_eval", GradOp::Recon),
];

#[derive(Clone, Copy, Debug)]
enum GradOp {
    Warp,
    Geo,
    Tex,
    Render,
    Loss,
    Recon,
}

const DRAWS: usize = 10;
const PARAMS_PER_DRAW: usize = 3;
const FD_STEP: f64 = 1e-5;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn flat<P: Params>(p: &mut P) -> (Vec<f64>, Vec<f64>) {
    let (mut v, mut g) = (Vec::new(), Vec::new());
    p.visit_params(&mut |a, b| {
        v.extend_from_slice(a);
        g.extend_from_slice(b);
    });
    (v, g)
}

fn set_param<P: Params>(p: &mut P, idx: usize, value: f64) {
    let mut off = 0;
    p.visit_params(&mut |a, _| {
        if idx >= off && idx < off + a.len() {
            a[idx - off] = value;
        }
        off += a.len();
    });
}

/// Worst relative error between accumulated gradients and central
/// differences of `objective` at the given parameter indices.
fn check_params<P: Params>(nets: &mut P, picks: &[usize], objective: impl Fn(&P) -> CliResult<f64>) -> CliResult<f64> {
    let (values, grads) = flat(nets);
    let mut worst: f64 = 0.0;
    for &i in picks {
        set_param(nets, i, values[i] + FD_STEP);
        let up = objective(nets)?;
        set_param(nets, i, values[i] - FD_STEP);
        let down = objective(nets)?;
        set_param(nets, i, values[i]);
        worst = worst.max(relative_error(grads[i], (up - down) / (2.0 * FD_STEP)));
    }
    Ok(worst)
}

fn small_avatar_arch(kind: PoseEncoderKind, seed: u64) -> AvatarArch {
    AvatarArch {
        posenc_order: 3,
        trunk_width: 12,
        trunk_layers: 2,
        head_width: 8,
        warp_width: 10,
        warp_layers: 2,
        pose_encoder: kind,
        map_size: 8,
        map_features: 3,
        density_scale: 5.0,
        seed,
    }
}

/// Finite-difference checks of every trainable operation on small networks.
/// Draws alternate between the vector and the map pose encoder.
struct GradientSuite<'a> {
    ctx: &'a Context,
    seed: u64,
}

impl<'a> GradientSuite<'a> {
    fn new(ctx: &'a Context, seed: u64) -> CliResult<Self> {
        Ok(Self { ctx, seed })
    }

    fn avatar(&self, draw: usize, rng: &mut ChaCha8Rng) -> CliResult<GeoTexNets> {
        let kind = if draw % 2 == 0 { PoseEncoderKind::Vector } else { PoseEncoderKind::Maps };
        let mut nets = GeoTexNets::new(&small_avatar_arch(kind, self.seed + draw as u64), self.ctx.body.joint_count())?;
        // The warp's last layer starts at zero; give it small weights so
        // every warp parameter has a gradient path.
        let last = nets.warp.decoder.layers().len() - 1;
        for w in nets.warp.decoder.layers_mut()[last].weight.data_mut() {
            *w = rng.random_range(-0.1..0.1);
        }
        Ok(nets)
    }

    fn points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| Vec3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.9..0.9), rng.random_range(-0.25..0.25))).collect()
    }

    fn signs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn picks(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> Vec<usize> {
        (0..PARAMS_PER_DRAW).map(|_| rng.random_range(lo..hi)).collect()
    }

    fn run(&self, op: GradOp) -> CliResult<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (op as u64 + 1) * 0x9e37_79b9);
        let mut worst: f64 = 0.0;
        for draw in 0..DRAWS {
            let err = match op {
                GradOp::Recon => self.recon_draw(&mut rng)?,
                _ => self.avatar_draw(op, draw, &mut rng)?,
            };
            worst = worst.max(err);
        }
        Ok(worst)
    }

    fn avatar_draw(&self, op: GradOp, draw: usize, rng: &mut ChaCha8Rng) -> CliResult<f64> {
        let body = &self.ctx.body;
        let mut nets = self.avatar(draw, rng)?;
        let pose = sample_pose(body, &toy_pose_ranges(), rng)?;
        let input = nets.pose_input(body, &pose)?;
        let template_params = nets.template.param_count();
        let total = nets.param_count();
        nets.zero_grad();
        match op {
            GradOp::Warp => {
                let pts = Self::points(rng, 6);
                let up: Vec<Vec3> = (0..pts.len()).map(|_| random_unit(rng)).collect();
                let (_, tape) = nets.field_forward(&pts, &input, 0)?;
                nets.field_backward(&tape, &FieldGrad { offsets: up.clone(), ..FieldGrad::default() }, true)?;
                // Parameters are ordered template first, then warp.
                let picks = Self::picks(rng, template_params, total);
                check_params(&mut nets, &picks, |n| Ok(n.offsets(&pts, &input)?.iter().zip(&up).map(|(o, u)| o.dot(u)).sum()))
            }
            GradOp::Geo => {
                let pts = Self::points(rng, 6);
                let up = Self::signs(rng, pts.len());
                let (_, tape) = nets.field_forward(&pts, &input, 0)?;
                nets.field_backward(&tape, &FieldGrad { occupancy: up.clone(), ..FieldGrad::default() }, true)?;
                let picks = Self::picks(rng, 0, total);
                check_params(&mut nets, &picks, |n| Ok(n.field(&pts, &input, false)?.occupancy.iter().zip(&up).map(|(o, u)| o * u).sum()))
            }
            GradOp::Tex => {
                let pts = Self::points(rng, 6);
                let up: Vec<Vec3> = (0..pts.len()).map(|_| random_unit(rng)).collect();
                let (_, tape) = nets.field_forward(&pts, &input, pts.len())?;
                nets.field_backward(&tape, &FieldGrad { colors: up.clone(), ..FieldGrad::default() }, true)?;
                let picks = Self::picks(rng, 0, total);
                check_params(&mut nets, &picks, |n| Ok(n.field(&pts, &input, true)?.colors.iter().zip(&up).map(|(c, u)| c.dot(u)).sum()))
            }
            GradOp::Render => {
                let ray = posed_ray(body, &pose, rng)?;
                let (ts, _) = stratified_samples(ray.near, ray.far, 12, Some(&mut *rng as &mut dyn rand::RngCore));
                let up = random_unit(rng);
                let rendered = volume_render(&nets, body, &pose, &input, &ray, &ts)?;
                let valid: Vec<Vec3> = rendered.canonical.iter().flatten().copied().collect();
                let deltas: Vec<f64> = (0..ts.len()).map(|k| if k + 1 < ts.len() { ts[k + 1] - ts[k] } else { ray.far - ts[k] }).collect();
                let (out, tape) = nets.field_forward(&valid, &input, valid.len())?;
                let mut sigma = vec![0.0; ts.len()];
                let mut colors = vec![Vec3::zeros(); ts.len()];
                let slots: Vec<usize> = rendered.canonical.iter().enumerate().filter(|(_, c)| c.is_some()).map(|(i, _)| i).collect();
                for (k, &i) in slots.iter().enumerate() {
                    sigma[i] = out.density[k];
                    colors[i] = out.colors[k];
                }
                let (g_sigma, g_color) = composite_backward(&sigma, &deltas, &colors, &up);
                let grad = FieldGrad {
                    density: slots.iter().map(|&i| g_sigma[i]).collect(),
                    colors: slots.iter().map(|&i| g_color[i]).collect(),
                    ..FieldGrad::default()
                };
                nets.field_backward(&tape, &grad, true)?;
                let picks = Self::picks(rng, 0, total);
                check_params(&mut nets, &picks, |n| Ok(volume_render(n, body, &pose, &input, &ray, &ts)?.color.dot(&up)))
            }
            GradOp::Loss => {
                let rays: Vec<PreparedRay> = (0..2)
                    .map(|_| PreparedRay {
                        canonical: (0..5).map(|k| (k != 2).then(|| Self::points(rng, 1)[0])).collect(),
                        deltas: (0..5).map(|_| rng.random_range(0.02..0.1)).collect(),
                        target: Vec3::new(rng.random(), rng.random(), rng.random()),
                    })
                    .collect();
                let points = Self::points(rng, 4);
                let labels = (0..points.len()).map(|i| (i % 2) as f64).collect();
                let batch = vec![Microbatch { input: &input, points, labels, rays: rays.iter().collect() }];
                let w = LossWeights { geo: 0.5, tex: 1.0, reg: 0.1 };
                loss_and_grad(&mut nets, &batch, &w, true)?;
                let picks = Self::picks(rng, 0, total);
                check_params(&mut nets, &picks, |n| Ok(loss_total(n, &batch, &w)?.total))
            }
            GradOp::Recon => unreachable!("handled by recon_draw"),
        }
    }

    fn recon_draw(&self, rng: &mut ChaCha8Rng) -> CliResult<f64> {
        let arch = ReconArch {
            channels: [4, 6, 6, 5],
            decoder_width: 12,
            decoder_layers: 2,
            z_order: 2,
            multiscale: rng.random(),
            seed: rng.random(),
            ..ReconArch::default()
        };
        let mut nets = ReconNets::new(&arch)?;
        let pose = sample_pose(&self.ctx.body, &toy_pose_ranges(), rng)?;
        let mesh = volcap::bodymodel::pose_mesh(&self.ctx.body.transforms(&pose)?, self.ctx.body.mesh(), self.ctx.body.vertex_weights())?;
        let plane = ImagePlane::canonical(16, 32);
        let maps: (NormalMap, NormalMap) =
            (ortho_render_normals(&mesh, &plane, View::Front), ortho_render_normals(&mesh, &plane, View::Back));
        let x = Self::points(rng, 1)[0];
        nets.zero_grad();
        let enc = nets.encode_tape(&maps.0, &maps.1)?;
        let (_, tape) = nets.eval_tape(&enc, &[x])?;
        nets.backward(&enc, &tape, &[1.0])?;
        let split = nets.encoder.param_count();
        let total = nets.param_count();
        let mut picks = Self::picks(rng, 0, split);
        picks.extend(Self::picks(rng, split, total));
        check_params(&mut nets, &picks, |n| Ok(recon_eval(n, &maps.0, &maps.1, &x)?))
    }
}

/// A ray along -z through a random pixel of the posed body's bounding box.
fn posed_ray(body: &volcap::bodymodel::ArticulatedBody, pose: &Pose, rng: &mut ChaCha8Rng) -> CliResult<Ray> {
    let (lo, hi) = posed_bounds(body, pose, 0.05)?;
    loop {
        let origin = Vec3::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y), 3.0);
        let dir = Vec3::new(0.0, 0.0, -1.0);
        if let Some((near, far)) = ray_box(&origin, &dir, &lo, &hi) {
            let ray = Ray { origin, dir, near, far };
            // Keep rays that actually meet the body.
            if body.sdf(&ray.at(0.5 * (near + far))) < 0.2 {
                return Ok(ray);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_comparisons() {
        assert!(Metric::new("a", 0.5, Op::Lt, 1.0).pass());
        assert!(!Metric::new("a", 1.0, Op::Lt, 1.0).pass());
        assert!(Metric::new("a", 1.0, Op::Le, 1.0).pass());
        assert!(Metric::new("a", 2.0, Op::Gt, 1.0).pass());
        assert!(Metric::new("a", 0.0, Op::Eq, 0.0).pass());
        assert!(!Metric::new("a", f64::NAN, Op::Gt, 0.0).pass());
    }

    #[test]
    fn csv_has_one_row_per_metric() {
        let r = Report {
            criterion: 7,
            title: title(7),
            metrics: vec![Metric::new("x", 1.0, Op::Lt, 2.0), Metric::new("y", 3.0, Op::Lt, 2.0)],
            seconds: 0.0,
        };
        let csv = to_csv(&[r.clone()]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "criterion,metric,value,op,threshold,pass");
        assert_eq!(lines[1], "7,x,1e0,<,2e0,true");
        assert_eq!(lines[2], "7,y,3e0,<,2e0,false");
        assert!(!r.pass());
        assert!(r.line().starts_with("FAIL [7] oracle equivalences:"));
    }

    #[test]
    fn tree_comparison_spots_differences() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        for root in [&a, &b] {
            std::fs::create_dir_all(root.join("sub")).unwrap();
            std::fs::write(root.join("sub/x"), b"same").unwrap();
        }
        assert_eq!(compare_trees(&a, &b).unwrap(), (1, 0));
        std::fs::write(b.join("sub/x"), b"diff").unwrap();
        std::fs::write(b.join("extra"), b"").unwrap();
        assert_eq!(compare_trees(&a, &b).unwrap(), (1, 2));
    }
}
