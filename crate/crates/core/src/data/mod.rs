//! Synthetic lesion datasets and their files.

mod augment;
mod dataset;
mod synth;

use thiserror::Error;

use crate::pnm::PnmError;

pub use augment::{Augmentation, SCALE_RANGE};
pub use dataset::{read_dataset, read_manifest, write_dataset, write_samples, Manifest, ManifestEntry, MANIFEST};
pub use synth::{
    draw_hair, generate_sample, generate_samples, render_without_hair, sample_geometry, sample_id, Contrast, Harmonic,
    LesionGeometry, Sample, SyntheticSpec, MAX_COVERAGE, MAX_RETRIES, MIN_COVERAGE,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("sample {index}: no admissible lesion after {retries} draws")]
    Generation { index: usize, retries: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("dataset integrity: {0}")]
    Integrity(String),
}

impl From<PnmError> for DataError {
    fn from(e: PnmError) -> Self {
        match e {
            PnmError::Io { path, source } => DataError::Io { path, source },
            PnmError::Malformed { path, reason } => DataError::Parse { path, reason },
        }
    }
}
