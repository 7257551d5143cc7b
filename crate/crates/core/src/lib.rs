//! Radar-centric 3D object detection pipeline around the network:
//! LiDAR-to-radar-like transformation, label-consistent augmentation,
//! bird's-eye-view encoding, prior-box target coding and
//! difficulty-stratified average precision.

pub mod augmentation;
pub mod bev;
pub mod codec;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod lidar2radar;
pub mod report;
pub mod rng;
pub mod synth;

pub use augmentation::{AugmentationConfig, SimilarityTransform};
pub use bev::{BevGrid, CropRegion, GridConfig};
pub use codec::{AnchorGrid, AnchorSpec, CodecConfig, Detection, TargetTensor};
pub use config::PipelineConfig;
pub use dataset::{Difficulty, Frame, FrameLabel, GroundTruthDatabase, Occlusion};
pub use eval::{ApMode, EvalConfig, EvalReport, IouKind};
pub use geometry::{OrientedBox3D, Point, PointCloud};
pub use lidar2radar::RadarizationConfig;
pub use synth::{PerturbationSpec, SceneSpec};

/// Any failure surfaced by the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Bev(#[from] bev::BevError),
    #[error(transparent)]
    Codec(#[from] codec::CodecError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Report(#[from] report::ReportError),
    #[error(transparent)]
    Io(#[from] io::IoError),
}

impl Error {
    /// True when the failure came from the filesystem rather than from bad input.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::Dataset(dataset::DatasetError::Io(_))
                | Error::Bev(bev::BevError::Io(_))
                | Error::Codec(codec::CodecError::Io(_))
                | Error::Report(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
