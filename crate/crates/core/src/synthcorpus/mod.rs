//! Procedural subjects standing in for textured scans and observed frames.

pub mod corpus;
pub mod observe;
pub mod scan;
pub mod subject;

pub use corpus::{
    corpus_poses, derive_seed, generate_corpus, get_pose, put_pose, sample_pose, toy_pose_ranges, Corpus, CorpusConfig, CorpusManifest,
    JointRange, ManifestScan, ScanRecord,
};
pub use observe::{add_angular_noise, observation_plane, out_of_plane_swing, synth_observation, Observation};
pub use scan::{
    sample_points, sample_scan, Camera, ColorView, LabeledPoints, PointSampling, ScanSample, ScanSettings, CAMERA_DISTANCE,
    ROUND_TRIP_TOLERANCE,
};
pub use subject::{StripeParams, SubjectParams, SyntheticSubject, WrinkleTerm};
