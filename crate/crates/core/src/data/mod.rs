//! Synthetic point-cloud sequences, their file formats and windowing.

mod format;
mod scene;
mod window;

pub use format::{
    load_dataset, load_sequence, parse_sequence, save_dataset, save_sequence, sequence_to_bytes,
    DatasetManifest, MANIFEST_FILE, SEQUENCE_MAGIC, UNLABELED,
};
pub use scene::{config_hash, generate_dataset, generate_scene, ClassTemplate, SceneConfig, Shape};
pub use window::{last_window_assignment, tiling_windows, windows, Window};

use crate::error::{Error, Result};
use crate::geometry::PointFrame;

/// An ordered run of frames sharing one class vocabulary and feature width.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRecord {
    pub frames: Vec<PointFrame>,
    pub feature_width: usize,
    pub num_classes: usize,
    /// Hash of the generator config, when known.
    pub metadata: Option<String>,
}

impl SequenceRecord {
    pub fn new(frames: Vec<PointFrame>, num_classes: usize, metadata: Option<String>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("a sequence needs at least one frame".into()))?;
        let feature_width = first.feature_width();
        for (i, f) in frames.iter().enumerate() {
            if f.feature_width() != feature_width {
                return Err(Error::InvalidArgument(format!(
                    "frame {i} has feature width {}, expected {feature_width}",
                    f.feature_width()
                )));
            }
            if i > 0 && f.frame_index <= frames[i - 1].frame_index {
                return Err(Error::InvalidArgument(format!(
                    "frame indices must increase strictly (frame {i})"
                )));
            }
            f.check_labels(num_classes)?;
        }
        Ok(SequenceRecord {
            frames,
            feature_width,
            num_classes,
            metadata,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn num_points(&self) -> usize {
        self.frames.iter().map(PointFrame::len).sum()
    }
}
