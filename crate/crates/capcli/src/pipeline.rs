//! Pipeline stages: in-memory operations plus the file-level subcommands
//! that wrap them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use volcap::bodymodel::{canonicalize_normal_map, pose_mesh, ArticulatedBody, Pose};
use volcap::geomath::{ImagePlane, NormalMap, RotationGrid, TriMesh};
use volcap::geotexavatar::{self, animate, generate_texture, AnimatedFrame, GeoTexNets};
use volcap::io::TnsrFile;
use volcap::normalfusion::{energy_csv, fuse, fuse_map, FusionResult};
use volcap::reconnet::{self, train_recon, ReconNets};
use volcap::synthcorpus::{
    derive_seed, generate_corpus, observation_plane, out_of_plane_swing, synth_observation, Corpus, SyntheticSubject,
};

use crate::artifacts::*;
use crate::config::{FusionMode, PipelineConfig};
use crate::error::{CliError, CliResult};

/// Seed stream of the synthetic frames (disjoint from the corpus streams).
const FRAME_STREAM_BASE: u64 = 1 << 40;

/// Joint whose estimate carries the injected pose error.
pub const ERROR_JOINT: &str = "l_elbow";

/// A validated configuration with its body model and artifact layout.
#[derive(Clone, Debug)]
pub struct Context {
    pub cfg: PipelineConfig,
    pub body: ArticulatedBody,
    pub layout: Layout,
}

impl Context {
    /// Resolves presets and seeds, validates, and builds the body.
    pub fn new(cfg: PipelineConfig) -> CliResult<Self> {
        let cfg = cfg.resolved();
        cfg.validate()?;
        let body = ArticulatedBody::toy(cfg.body.resolution)?;
        let layout = Layout::new(&cfg.workdir);
        Ok(Self { cfg, body, layout })
    }

    pub fn canonical_plane(&self) -> ImagePlane {
        self.cfg.corpus.corpus.canonical_plane()
    }

    pub fn subject(&self) -> CliResult<SyntheticSubject> {
        Ok(SyntheticSubject::new(self.body.clone(), self.cfg.corpus.corpus.subject.clone())?)
    }

    pub fn new_avatar(&self) -> CliResult<GeoTexNets> {
        Ok(GeoTexNets::new(&self.cfg.avatar.arch, self.body.joint_count())?)
    }

    pub fn new_recon(&self) -> CliResult<ReconNets> {
        Ok(ReconNets::new(&self.cfg.recon.arch)?)
    }

    pub fn load_avatar(&self) -> CliResult<GeoTexNets> {
        Ok(GeoTexNets::from_tnsr(&load_tnsr(&self.layout.avatar(), "run train-avatar first")?)?)
    }

    pub fn load_recon(&self) -> CliResult<ReconNets> {
        Ok(ReconNets::from_tnsr(&load_tnsr(&self.layout.recon(), "run train-recon first")?)?)
    }

    /// Frames to process: the given directories, or every frame of the workdir.
    pub fn frame_dirs(&self, explicit: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
        if explicit.is_empty() {
            self.layout.frames()
        } else {
            Ok(explicit.to_vec())
        }
    }
}

/// Renders the subject at `pose` and perturbs the pose estimate of the
/// error joint by the configured out-of-plane swing.
pub fn synth_frame(ctx: &Context, subject: &SyntheticSubject, pose: &Pose, index: usize) -> CliResult<(Frame, TriMesh)> {
    let c = &ctx.cfg.capture;
    let joint = ctx.body.joint_index(ERROR_JOINT).expect("toy body has a left elbow");
    let error = [(joint, out_of_plane_swing(&ctx.body, joint, c.forearm_error_deg)?)];
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ctx.cfg.seed, FRAME_STREAM_BASE + index as u64));
    let plane = observation_plane(c.observation_size);
    let obs = synth_observation(subject, pose, &error, c.noise_deg, c.observation_resolution, &plane, &mut rng)?;
    let frame = Frame { normals: obs.normals, plane: obs.plane, estimated_pose: obs.estimated_pose, true_pose: Some(obs.true_pose) };
    Ok((frame, obs.posed_mesh))
}

/// Generates the corpus and one synthetic frame per held-out pose.
pub fn cmd_synth_corpus(ctx: &Context) -> CliResult<Corpus> {
    let corpus = generate_corpus(&ctx.body, &ctx.cfg.corpus.corpus)?;
    write_corpus(&ctx.layout, &corpus)?;
    let subject = ctx.subject()?;
    for (k, pose) in corpus.test_poses.iter().enumerate() {
        let (frame, truth) = synth_frame(ctx, &subject, pose, k)?;
        let dir = ctx.layout.frames_dir().join(frame_name(k));
        frame.save(&dir)?;
        save_mesh(&truth, &truth_mesh_path(&dir))?;
    }
    Ok(corpus)
}

pub fn cmd_train_avatar(ctx: &Context, mut log: impl FnMut(&str)) -> CliResult<()> {
    let scans = read_scans(&ctx.layout)?;
    let a = &ctx.cfg.avatar;
    let mut csv = String::from("epoch,loss,geo,tex,reg,warp_trained\n");
    let trained = geotexavatar::train_avatar(ctx.new_avatar()?, &ctx.body, &scans, &a.train, &a.rays, |s| {
        let l = &s.loss;
        let _ = writeln!(csv, "{},{:e},{:e},{:e},{:e},{}", s.epoch, l.total, l.geo, l.tex, l.reg, s.warp_trained);
        log(&format!("avatar epoch {} loss {:.5}", s.epoch, l.total));
    })?;
    save_tnsr(&trained.nets.to_tnsr()?, &ctx.layout.avatar())?;
    write_file(&ctx.layout.models_dir().join("avatar_history.csv"), csv.as_bytes())
}

pub fn cmd_train_recon(ctx: &Context, mut log: impl FnMut(&str)) -> CliResult<()> {
    let scans = read_scans(&ctx.layout)?;
    let mut csv = String::from("epoch,loss\n");
    let trained = train_recon(ctx.new_recon()?, &scans, &ctx.cfg.recon.train, |e, l| {
        let _ = writeln!(csv, "{e},{l:e}");
        log(&format!("recon epoch {e} loss {l:.5}"));
    })?;
    save_tnsr(&trained.nets.to_tnsr()?, &ctx.layout.recon())?;
    write_file(&ctx.layout.models_dir().join("recon_history.csv"), csv.as_bytes())
}

/// Avatar surface and canonical normal maps at the frame's estimated pose.
pub fn stage_animate(ctx: &Context, avatar: &GeoTexNets, pose: &Pose) -> CliResult<AnimatedFrame> {
    Ok(animate(avatar, &ctx.body, pose, ctx.cfg.capture.avatar_resolution, &ctx.canonical_plane())?)
}

/// Observed normals moved into the canonical frame over the avatar surface.
pub fn stage_canonicalize(ctx: &Context, frame: &Frame, animated: &AnimatedFrame) -> CliResult<(NormalMap, NormalMap)> {
    let weights = ctx.body.transfer_weights(&animated.mesh.vertices);
    let c = canonicalize_normal_map(
        &ctx.body,
        &frame.estimated_pose,
        &animated.mesh,
        &weights,
        &frame.normals,
        &frame.plane,
        &ctx.canonical_plane(),
    )?;
    Ok((c.front, c.back))
}

/// Fused front/back maps; the fusion results are absent in replacement mode.
#[derive(Clone, Debug)]
pub struct Fused {
    pub front: NormalMap,
    pub back: NormalMap,
    pub results: Option<(FusionResult, FusionResult)>,
}

/// Either rotation-grid fusion or direct replacement of the avatar normals
/// by the observed ones wherever both exist.
pub fn stage_fuse(ctx: &Context, animated: &AnimatedFrame, image: &(NormalMap, NormalMap), mode: FusionMode) -> CliResult<Fused> {
    let cfg = &ctx.cfg.fusion;
    match mode {
        FusionMode::Fuse => {
            let (f, b) = fuse(&animated.front, &animated.back, &image.0, &image.1, cfg).map_err(CliError::Fusion)?;
            Ok(Fused { front: f.fused.clone(), back: b.fused.clone(), results: Some((f, b)) })
        }
        FusionMode::Replace => {
            let replace = |a: &NormalMap, i: &NormalMap| -> CliResult<NormalMap> {
                let identity = RotationGrid::identity(cfg.grid_size, a.width(), a.height())?;
                let direct = volcap::normalfusion::FusionConfig { blend: 1.0, ..cfg.clone() };
                fuse_map(a, i, &identity, &direct).map_err(CliError::Fusion)
            };
            Ok(Fused { front: replace(&animated.front, &image.0)?, back: replace(&animated.back, &image.1)?, results: None })
        }
    }
}

pub fn stage_reconstruct(ctx: &Context, recon: &ReconNets, fused: &Fused, pose: &Pose) -> CliResult<reconnet::Reconstruction> {
    match reconnet::reconstruct(recon, &fused.front, &fused.back, pose, &ctx.body, ctx.cfg.capture.recon_resolution) {
        Err(volcap::Error::EmptySurface) => Err(CliError::EmptyReconstruction),
        other => Ok(other?),
    }
}

/// Colours both meshes of a reconstruction from the avatar's texture field.
pub fn stage_texture(ctx: &Context, avatar: &GeoTexNets, pose: &Pose, rec: &mut reconnet::Reconstruction) -> CliResult<()> {
    let c = &ctx.cfg.capture;
    let input = avatar.pose_input(&ctx.body, pose)?;
    let colors = generate_texture(avatar, &input, &rec.canonical, c.texture_delta, c.texture_samples)?;
    rec.canonical.colors = Some(colors.clone());
    rec.posed.colors = Some(colors);
    Ok(())
}

/// Everything one frame's capture produces.
#[derive(Clone, Debug)]
pub struct Captured {
    pub animated: AnimatedFrame,
    pub image: (NormalMap, NormalMap),
    pub fused: Fused,
    pub reconstruction: reconnet::Reconstruction,
}

/// animate, canonicalize, fuse, reconstruct and texture one frame.
pub fn capture_frame(ctx: &Context, avatar: &GeoTexNets, recon: &ReconNets, frame: &Frame, mode: FusionMode) -> CliResult<Captured> {
    let pose = &frame.estimated_pose;
    let animated = stage_animate(ctx, avatar, pose)?;
    let image = stage_canonicalize(ctx, frame, &animated)?;
    let fused = stage_fuse(ctx, &animated, &image, mode)?;
    let mut reconstruction = stage_reconstruct(ctx, recon, &fused, pose)?;
    stage_texture(ctx, avatar, pose, &mut reconstruction)?;
    Ok(Captured { animated, image, fused, reconstruction })
}

fn write_fused(dir: &Path, fused: &Fused) -> CliResult<()> {
    let mut f = TnsrFile::new();
    put_pair(&mut f, "fused.", &fused.front, &fused.back)?;
    save_tnsr(&f, &dir.join("fused.tnsr"))?;
    if let Some((front, back)) = &fused.results {
        write_file(&dir.join("energy_front.csv"), energy_csv(&front.trace).as_bytes())?;
        write_file(&dir.join("energy_back.csv"), energy_csv(&back.trace).as_bytes())?;
    }
    Ok(())
}

fn write_meshes(dir: &Path, rec: &reconnet::Reconstruction) -> CliResult<()> {
    save_mesh(&rec.canonical, &dir.join("canonical.ply"))?;
    save_mesh(&rec.posed, &dir.join("posed.ply"))
}

/// Writes a capture's meshes and, on request, its intermediate maps.
pub fn write_capture(dir: &Path, out: &Captured, dump: bool) -> CliResult<()> {
    write_meshes(dir, &out.reconstruction)?;
    if dump {
        let mut f = TnsrFile::new();
        put_pair(&mut f, "avatar.", &out.animated.front, &out.animated.back)?;
        put_pair(&mut f, "image.", &out.image.0, &out.image.1)?;
        save_tnsr(&f, &dir.join("maps.tnsr"))?;
        save_mesh(&out.animated.mesh, &dir.join("avatar.ply"))?;
        write_fused(dir, &out.fused)?;
    }
    Ok(())
}

/// Runs `job(0..count)` with up to `jobs` worker threads. Results keep index
/// order; the first error in index order is returned.
pub fn parallel_map<T: Send>(count: usize, jobs: usize, job: impl Fn(usize) -> CliResult<T> + Sync) -> CliResult<Vec<T>> {
    let jobs = jobs.clamp(1, count.max(1));
    let mut slots: Vec<Option<CliResult<T>>> = (0..count).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let done = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let r = job(i);
                done.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every frame was processed")).collect()
}

pub fn cmd_capture(ctx: &Context, frames: &[PathBuf], jobs: usize, dump: bool) -> CliResult<Vec<PathBuf>> {
    let avatar = ctx.load_avatar()?;
    let recon = ctx.load_recon()?;
    let frames = ctx.frame_dirs(frames)?;
    let loaded = frames.iter().map(|d| Frame::load(d)).collect::<CliResult<Vec<_>>>()?;
    let results = parallel_map(frames.len(), jobs, |i| capture_frame(ctx, &avatar, &recon, &loaded[i], ctx.cfg.capture.mode))?;
    let mut outs = Vec::with_capacity(frames.len());
    for (dir, out) in frames.iter().zip(&results) {
        let target = ctx.layout.stage_dir("capture", &frame_label(dir));
        write_capture(&target, out, dump)?;
        outs.push(target);
    }
    Ok(outs)
}

pub fn cmd_animate(ctx: &Context, frames: &[PathBuf]) -> CliResult<()> {
    let avatar = ctx.load_avatar()?;
    for dir in ctx.frame_dirs(frames)? {
        let frame = Frame::load(&dir)?;
        let animated = stage_animate(ctx, &avatar, &frame.estimated_pose)?;
        let out = ctx.layout.stage_dir("animate", &frame_label(&dir));
        let mut f = TnsrFile::new();
        put_pair(&mut f, "avatar.", &animated.front, &animated.back)?;
        save_tnsr(&f, &out.join("maps.tnsr"))?;
        save_mesh(&animated.mesh, &out.join("avatar.ply"))?;
    }
    Ok(())
}

fn load_animated(ctx: &Context, label: &str) -> CliResult<AnimatedFrame> {
    let dir = ctx.layout.stage_dir("animate", label);
    let maps = load_tnsr(&dir.join("maps.tnsr"), "run animate first")?;
    let (front, back) = get_pair(&maps, "avatar.")?;
    Ok(AnimatedFrame { mesh: load_mesh(&dir.join("avatar.ply"), "run animate first")?, front, back })
}

pub fn cmd_fuse_normals(ctx: &Context, frames: &[PathBuf]) -> CliResult<()> {
    for dir in ctx.frame_dirs(frames)? {
        let label = frame_label(&dir);
        let frame = Frame::load(&dir)?;
        let animated = load_animated(ctx, &label)?;
        let image = stage_canonicalize(ctx, &frame, &animated)?;
        let fused = stage_fuse(ctx, &animated, &image, ctx.cfg.capture.mode)?;
        let out = ctx.layout.stage_dir("fuse", &label);
        let mut f = TnsrFile::new();
        put_pair(&mut f, "image.", &image.0, &image.1)?;
        save_tnsr(&f, &out.join("image.tnsr"))?;
        write_fused(&out, &fused)?;
    }
    Ok(())
}

pub fn cmd_reconstruct(ctx: &Context, frames: &[PathBuf]) -> CliResult<()> {
    let recon = ctx.load_recon()?;
    for dir in ctx.frame_dirs(frames)? {
        let label = frame_label(&dir);
        let frame = Frame::load(&dir)?;
        let maps = load_tnsr(&ctx.layout.stage_dir("fuse", &label).join("fused.tnsr"), "run fuse-normals first")?;
        let (front, back) = get_pair(&maps, "fused.")?;
        let rec = stage_reconstruct(ctx, &recon, &Fused { front, back, results: None }, &frame.estimated_pose)?;
        write_meshes(&ctx.layout.stage_dir("reconstruct", &label), &rec)?;
    }
    Ok(())
}

pub fn cmd_texgen(ctx: &Context, frames: &[PathBuf]) -> CliResult<()> {
    let avatar = ctx.load_avatar()?;
    for dir in ctx.frame_dirs(frames)? {
        let label = frame_label(&dir);
        let frame = Frame::load(&dir)?;
        let src = ctx.layout.stage_dir("reconstruct", &label);
        let canonical = load_mesh(&src.join("canonical.ply"), "run reconstruct first")?;
        let weights = ctx.body.transfer_weights(&canonical.vertices);
        let posed = pose_mesh(&ctx.body.transforms(&frame.estimated_pose)?, &canonical, &weights)?;
        let mut rec = reconnet::Reconstruction { canonical, posed };
        stage_texture(ctx, &avatar, &frame.estimated_pose, &mut rec)?;
        write_meshes(&ctx.layout.stage_dir("texgen", &label), &rec)?;
    }
    Ok(())
}
