use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use volcap::difffield::TrainConfig;
use volcap::geotexavatar::{AvatarArch, RayPoolConfig};
use volcap::normalfusion::FusionConfig;
use volcap::reconnet::{ReconArch, ReconTrainConfig};
use volcap::synthcorpus::{CorpusConfig, SubjectParams};

use crate::error::CliError;

/// Named procedural subjects.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectPreset {
    #[default]
    Wrinkled,
    Static,
    Sliding,
}

impl SubjectPreset {
    pub fn params(self) -> SubjectParams {
        match self {
            SubjectPreset::Wrinkled => SubjectParams::toy_wrinkled(),
            SubjectPreset::Static => SubjectParams::toy_static(),
            SubjectPreset::Sliding => SubjectParams::toy_sliding(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BodySection {
    /// Marching-cubes resolution of the rest mesh.
    pub resolution: usize,
}

impl Default for BodySection {
    fn default() -> Self {
        Self { resolution: 64 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Overrides `corpus.subject` with a named subject when set.
    pub preset: Option<SubjectPreset>,
    #[serde(flatten)]
    pub corpus: CorpusConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AvatarSection {
    pub arch: AvatarArch,
    pub train: TrainConfig,
    pub rays: RayPoolConfig,
}

impl Default for AvatarSection {
    /// Desk-scale schedule: narrower networks, longer epochs and a faster
    /// warp than the library defaults.
    fn default() -> Self {
        Self {
            arch: AvatarArch { trunk_width: 64, warp_width: 64, head_width: 64, ..AvatarArch::default() },
            train: TrainConfig { iters_per_epoch: 200, lr_warp: 1e-3, ..TrainConfig::default() },
            rays: RayPoolConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconSection {
    pub arch: ReconArch,
    pub train: ReconTrainConfig,
}

/// How the observed canonical normals reach the reconstruction network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Rotation-grid fusion of avatar and observed maps.
    #[default]
    Fuse,
    /// Observed normals replace avatar normals wherever they exist.
    Replace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptureSection {
    /// Side of the square posed-space observation maps.
    pub observation_size: usize,
    /// Subject surface resolution used to render observations.
    pub observation_resolution: usize,
    /// Mean angular noise of observed normals (degrees).
    pub noise_deg: f64,
    /// Out-of-plane swing of the left forearm in the estimated pose (degrees).
    pub forearm_error_deg: f64,
    /// Grid resolution of the animated avatar.
    pub avatar_resolution: usize,
    /// Grid resolution of the reconstruction.
    pub recon_resolution: usize,
    /// Half length of the texture rays (meters).
    pub texture_delta: f64,
    pub texture_samples: usize,
    pub mode: FusionMode,
}

impl Default for CaptureSection {
    fn default() -> Self {
        Self {
            observation_size: 256,
            observation_resolution: 128,
            noise_deg: 0.0,
            forearm_error_deg: 15.0,
            avatar_resolution: 96,
            recon_resolution: 128,
            texture_delta: 0.02,
            texture_samples: 32,
            mode: FusionMode::Fuse,
        }
    }
}

/// Whole-pipeline configuration, read from TOML. Unknown keys are errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root of every artifact the pipeline reads or writes.
    pub workdir: PathBuf,
    /// Master seed; every component seed is derived from it.
    pub seed: u64,
    pub body: BodySection,
    pub corpus: CorpusSection,
    pub avatar: AvatarSection,
    pub fusion: FusionConfig,
    pub recon: ReconSection,
    pub capture: CaptureSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            workdir: PathBuf::from("out"),
            seed: 0,
            body: BodySection::default(),
            corpus: CorpusSection::default(),
            avatar: AvatarSection::default(),
            fusion: FusionConfig::default(),
            recon: ReconSection::default(),
            capture: CaptureSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))
    }

    /// Loads a config file; a relative `workdir` is resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.workdir.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.workdir = base.join(&cfg.workdir);
        }
        Ok(cfg)
    }

    /// Applies the subject preset and propagates the master seed into
    /// every component.
    pub fn resolved(mut self) -> Self {
        if let Some(p) = self.corpus.preset {
            self.corpus.corpus.subject = p.params();
        }
        let s = self.seed;
        self.corpus.corpus.seed = s;
        self.avatar.arch.seed = s;
        self.avatar.train.seed = s;
        self.recon.arch.seed = s;
        self.recon.train.seed = s;
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |r: volcap::Result<()>| r.map_err(|e| CliError::config(e.to_string()));
        wrap(self.corpus.corpus.subject.validate())?;
        wrap(self.avatar.arch.validate())?;
        wrap(self.avatar.train.validate())?;
        wrap(self.fusion.validate())?;
        wrap(self.recon.arch.validate())?;
        wrap(self.recon.train.validate())?;
        let c = &self.capture;
        if c.observation_size < 8 || c.avatar_resolution < 8 || c.recon_resolution < 8 || self.body.resolution < 8 {
            return Err(CliError::config("map and grid resolutions must be at least 8"));
        }
        if !(c.noise_deg >= 0.0) || !c.forearm_error_deg.is_finite() {
            return Err(CliError::config("noise must be nonnegative and the pose error finite"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("bogus = 1").is_err());
        assert!(PipelineConfig::from_toml("[fusion]\ngrid = 3").is_err());
        assert!(PipelineConfig::from_toml("[corpus]\ntrain_scanz = 3").is_err());
    }

    #[test]
    fn nested_sections_parse() {
        let cfg = PipelineConfig::from_toml(
            "seed = 7\n[corpus]\npreset = \"static\"\ntrain_scans = 3\n[fusion]\ngrid_size = 16\n[avatar.train]\nepochs = 2\n",
        )
        .unwrap()
        .resolved();
        assert_eq!(cfg.corpus.corpus.train_scans, 3);
        assert_eq!(cfg.corpus.corpus.subject, SubjectParams::toy_static());
        assert_eq!(cfg.fusion.grid_size, 16);
        assert_eq!(cfg.avatar.train.epochs, 2);
        assert_eq!((cfg.corpus.corpus.seed, cfg.recon.train.seed), (7, 7));
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = PipelineConfig::default().resolved();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
