//! Dataset indexing, frame sampling, augmentation, patient-wise folds and the
//! synthetic dataset generator.

mod augment;
mod folds;
mod frame;
mod index;
mod labels;
mod sampling;
mod synthetic;

use rayon::prelude::*;

pub use augment::{
    augment_sequence, auto_contrast, crop, crop_origin, resize, resize_then_crop, AugmentSpec, SequenceTransform,
};
pub use folds::{patient_kfold, verify_patient_disjoint, ClipKFold, FoldPlan, Splitter};
pub use frame::{Frame, FrameSequence, SamplingMode};
pub use index::{load_index, ClipRecord, DatasetIndex, MANIFEST_NAME};
pub use labels::{LabelPreset, LabelSet};
pub use sampling::{sample_consecutive, sample_frames, sample_spaced};
pub use synthetic::{gen_synthetic, render_clip, ClassDesign, SyntheticSpec};

use std::path::PathBuf;

use crate::error::{Error, Result};

/// Every frame of every clip decoded into memory, in index order.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub index: DatasetIndex,
    pub frames: Vec<Vec<Frame>>,
}

impl LoadedDataset {
    pub fn load(index: DatasetIndex) -> Result<Self> {
        let frames = index
            .clips
            .par_iter()
            .map(|clip| clip.load_frames(&(0..clip.len()).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { index, frames })
    }

    /// Wraps frames that already live in memory. Frame paths are nominal.
    pub fn from_memory(label_set: LabelSet, clips: Vec<(String, String, usize, Vec<Frame>)>) -> Result<Self> {
        let mut records = Vec::with_capacity(clips.len());
        let mut frames = Vec::with_capacity(clips.len());
        for (patient_id, clip_id, label, clip_frames) in clips {
            let viewpoint = label_set
                .names()
                .get(label)
                .ok_or_else(|| Error::Index(format!("label {label} of {}", label_set.len())))?
                .to_string();
            if clip_frames.is_empty() {
                return Err(Error::ClipTooShort {
                    clip: clip_id,
                    len: 0,
                    needed: 1,
                });
            }
            records.push(ClipRecord {
                frame_paths: (0..clip_frames.len())
                    .map(|i| PathBuf::from(format!("{patient_id}/{viewpoint}/{clip_id}/frame_{i:04}.png")))
                    .collect(),
                patient_id,
                viewpoint,
                label,
                clip_id,
            });
            frames.push(clip_frames);
        }
        Ok(Self {
            index: DatasetIndex { clips: records, label_set },
            frames,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.index.label_set.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.index.clips.iter().map(|c| c.label).collect()
    }
}
