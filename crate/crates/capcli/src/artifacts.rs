//! On-disk layout of a pipeline work directory and the frame format.

use std::path::{Path, PathBuf};

use volcap::bodymodel::Pose;
use volcap::geomath::{ImagePlane, NormalMap, TriMesh};
use volcap::io::{get_normal_map, load_ply, put_normal_map, save_ply, Tensor, TnsrFile};
use volcap::synthcorpus::{get_pose, put_pose, Corpus, CorpusManifest, ScanRecord};

use crate::error::{require, CliError, CliResult};

/// Paths of every artifact under one work directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn manifest(&self) -> PathBuf {
        self.corpus_dir().join("manifest.toml")
    }

    pub fn frames_dir(&self) -> PathBuf {
        self.root.join("frames")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn avatar(&self) -> PathBuf {
        self.models_dir().join("avatar.tnsr")
    }

    pub fn recon(&self) -> PathBuf {
        self.models_dir().join("recon.tnsr")
    }

    /// Output directory of a per-frame stage.
    pub fn stage_dir(&self, stage: &str, frame: &str) -> PathBuf {
        self.root.join(stage).join(frame)
    }

    pub fn eval_csv(&self) -> PathBuf {
        self.root.join("eval.csv")
    }

    /// Frame directories in name order.
    pub fn frames(&self) -> CliResult<Vec<PathBuf>> {
        let dir = self.frames_dir();
        require(&[&dir], "run synth-corpus first")?;
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))? {
            let path = entry.map_err(|e| CliError::io(&dir, e))?.path();
            if path.join(FRAME_FILE).is_file() {
                out.push(path);
            }
        }
        out.sort();
        Ok(out)
    }
}

pub const FRAME_FILE: &str = "frame.tnsr";

pub fn frame_name(index: usize) -> String {
    format!("frame_{index:03}")
}

/// Name of a frame directory (its last path component).
pub fn frame_label(dir: &Path) -> String {
    dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "frame".into())
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn save_tnsr(f: &TnsrFile, path: &Path) -> CliResult<()> {
    write_file(path, &f.to_bytes())
}

pub fn load_tnsr(path: &Path, hint: &str) -> CliResult<TnsrFile> {
    require(&[path], hint)?;
    Ok(TnsrFile::load(path)?)
}

pub fn save_mesh(mesh: &TriMesh, path: &Path) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    Ok(save_ply(mesh, path)?)
}

pub fn load_mesh(path: &Path, hint: &str) -> CliResult<TriMesh> {
    require(&[path], hint)?;
    Ok(load_ply(path)?)
}

/// One observed frame: a posed-space front normal map on its image window
/// and the estimated pose. The true pose is kept for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub normals: NormalMap,
    pub plane: ImagePlane,
    pub estimated_pose: Pose,
    pub true_pose: Option<Pose>,
}

impl Frame {
    pub fn to_tnsr(&self) -> CliResult<TnsrFile> {
        let mut f = TnsrFile::new();
        put_normal_map(&mut f, "normals", &self.normals)?;
        let p = &self.plane;
        f.insert("window", Tensor::f64(&[4], vec![p.x_min, p.x_max, p.y_min, p.y_max])?)?;
        put_pose(&mut f, "estimated_pose", &self.estimated_pose)?;
        if let Some(t) = &self.true_pose {
            put_pose(&mut f, "true_pose", t)?;
        }
        Ok(f)
    }

    pub fn from_tnsr(f: &TnsrFile) -> CliResult<Self> {
        let normals = get_normal_map(f, "normals")?;
        let (w, _) = f.f64("window")?;
        if w.len() != 4 || !(w[1] > w[0] && w[3] > w[2]) {
            return Err(volcap::Error::Format("frame window must be [x_min, x_max, y_min, y_max]".into()).into());
        }
        let plane = ImagePlane { x_min: w[0], x_max: w[1], y_min: w[2], y_max: w[3], width: normals.width(), height: normals.height() };
        let true_pose = if f.get("true_pose.joints").is_some() { Some(get_pose(f, "true_pose")?) } else { None };
        Ok(Self { normals, plane, estimated_pose: get_pose(f, "estimated_pose")?, true_pose })
    }

    pub fn load(dir: &Path) -> CliResult<Self> {
        Self::from_tnsr(&load_tnsr(&dir.join(FRAME_FILE), "not a frame directory")?)
    }

    pub fn save(&self, dir: &Path) -> CliResult<()> {
        save_tnsr(&self.to_tnsr()?, &dir.join(FRAME_FILE))
    }
}

/// Ground-truth posed surface stored beside a synthetic frame.
pub fn truth_mesh_path(frame_dir: &Path) -> PathBuf {
    frame_dir.join("truth_posed.ply")
}

pub fn write_corpus(layout: &Layout, corpus: &Corpus) -> CliResult<()> {
    let dir = layout.corpus_dir();
    for (i, rec) in corpus.train.iter().enumerate() {
        save_tnsr(&rec.to_tnsr()?, &dir.join(Corpus::scan_file_name(i)))?;
    }
    let manifest = toml::to_string(&corpus.manifest()).map_err(|e| CliError::config(format!("manifest: {e}")))?;
    write_file(&layout.manifest(), manifest.as_bytes())
}

pub fn read_manifest(layout: &Layout) -> CliResult<CorpusManifest> {
    let path = layout.manifest();
    require(&[&path], "run synth-corpus first")?;
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn read_scans(layout: &Layout) -> CliResult<Vec<ScanRecord>> {
    let manifest = read_manifest(layout)?;
    manifest
        .scans
        .iter()
        .map(|s| Ok(ScanRecord::from_tnsr(&load_tnsr(&layout.corpus_dir().join(&s.file), "corpus is incomplete")?)?))
        .collect()
}

/// Writes a map pair under `front`/`back` names with a prefix.
pub fn put_pair(f: &mut TnsrFile, prefix: &str, front: &NormalMap, back: &NormalMap) -> CliResult<()> {
    put_normal_map(f, &format!("{prefix}front"), front)?;
    put_normal_map(f, &format!("{prefix}back"), back)?;
    Ok(())
}

pub fn get_pair(f: &TnsrFile, prefix: &str) -> CliResult<(NormalMap, NormalMap)> {
    Ok((get_normal_map(f, &format!("{prefix}front"))?, get_normal_map(f, &format!("{prefix}back"))?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use volcap::geomath::Vec3;

    #[test]
    fn frame_round_trips() {
        let mut normals = NormalMap::invalid(4, 3);
        normals.set(1, 2, Some(Vec3::new(0.0, 0.6, 0.8)));
        let mut pose = Pose::rest(3);
        pose.joints[1] = [0.1, -0.2, 0.3];
        let frame = Frame {
            normals,
            plane: ImagePlane { x_min: -1.0, x_max: 1.0, y_min: -0.5, y_max: 0.5, width: 4, height: 3 },
            estimated_pose: pose.clone(),
            true_pose: Some(Pose::rest(3)),
        };
        let back = Frame::from_tnsr(&TnsrFile::from_bytes(&frame.to_tnsr().unwrap().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, frame);
        let no_truth = Frame { true_pose: None, ..frame };
        assert_eq!(Frame::from_tnsr(&no_truth.to_tnsr().unwrap()).unwrap(), no_truth);
    }

    #[test]
    fn missing_frame_is_a_missing_input() {
        let dir = tempfile::tempdir().unwrap();
        let err = Frame::load(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
