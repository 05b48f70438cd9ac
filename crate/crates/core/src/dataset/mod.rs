//! Frames, interleaving, augmentation, splits and on-disk layouts.

mod augment;
mod layout;
mod split;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;
use crate::scan_sim::GroundTruthRecord;

pub use augment::{apply_augmentation, augment, sample_augmentation, AugmentConfig, AugmentDraw};
pub use layout::{
    load_dataset, read_manifest, read_png, synthetic_frame_id, write_dataset, write_png16, write_synthetic_dataset,
    DatasetEntry, Layout, Manifest, SplitIds, MANIFEST_SCHEMA_VERSION,
};
pub use split::{split_dataset, DatasetSplit};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("width {0} is odd; interleaved frames need an even number of columns")]
    OddWidth(usize),
    #[error("half-image shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("split ratios {0:?} must be non-negative and sum to 1")]
    InvalidRatios([f64; 3]),
    #[error("need at least 3 frames to split, got {0}")]
    TooFewFrames(usize),
    #[error("dataset directory {0} does not exist")]
    MissingDirectory(PathBuf),
    #[error("malformed image {path}: {reason}")]
    MalformedImage { path: PathBuf, reason: String },
    #[error("inconsistent dimensions in {path}: expected {expected:?}, found {found:?}")]
    InconsistentDimensions {
        path: PathBuf,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("malformed manifest or sidecar {path}: {reason}")]
    MalformedMetadata { path: PathBuf, reason: String },
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Simulation(#[from] crate::scan_sim::SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameSource {
    Synthetic,
    Real,
}

/// One interleaved scan and its two scan-direction halves.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_id: String,
    pub interleaved: Image,
    /// Columns 0, 2, 4, ... (forward scan lines).
    pub odd_half: Image,
    /// Columns 1, 3, 5, ... (backward scan lines).
    pub even_half: Image,
    pub source: FrameSource,
    pub ground_truth: Option<GroundTruthRecord>,
}

impl Frame {
    pub fn new(frame_id: impl Into<String>, interleaved: Image, source: FrameSource) -> Result<Self, DatasetError> {
        let (odd_half, even_half) = deinterleave(&interleaved)?;
        Ok(Self {
            frame_id: frame_id.into(),
            interleaved,
            odd_half,
            even_half,
            source,
            ground_truth: None,
        })
    }

    pub fn from_halves(
        frame_id: impl Into<String>,
        odd_half: Image,
        even_half: Image,
        source: FrameSource,
    ) -> Result<Self, DatasetError> {
        let interleaved = interleave(&odd_half, &even_half)?;
        Ok(Self {
            frame_id: frame_id.into(),
            interleaved,
            odd_half,
            even_half,
            source,
            ground_truth: None,
        })
    }

    pub fn with_ground_truth(mut self, gt: Option<GroundTruthRecord>) -> Self {
        self.ground_truth = gt;
        self
    }
}

pub fn deinterleave(interleaved: &Image) -> Result<(Image, Image), DatasetError> {
    let w = interleaved.width();
    if !w.is_multiple_of(2) {
        return Err(DatasetError::OddWidth(w));
    }
    Ok((interleaved.columns(0, 2), interleaved.columns(1, 2)))
}

pub fn interleave(odd_half: &Image, even_half: &Image) -> Result<Image, DatasetError> {
    if odd_half.dims() != even_half.dims() {
        return Err(DatasetError::ShapeMismatch(odd_half.dims(), even_half.dims()));
    }
    Ok(Image::from_fn(odd_half.height(), 2 * odd_half.width(), |i, j| {
        if j % 2 == 0 {
            odd_half.get(i, j / 2)
        } else {
            even_half.get(i, j / 2)
        }
    }))
}
