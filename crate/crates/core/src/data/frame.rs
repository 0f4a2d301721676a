use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Grayscale image with values in `[0, 1]`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::Dimension(format!(
                "frame {height}×{width} cannot hold {} pixels",
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            pixels: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// `1 × H × W` tensor for the backbone.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, self.height, self.width], self.pixels.clone()).expect("frame is non-empty")
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::from(e).at(path))?.into_luma8();
        let (w, h) = img.dimensions();
        let pixels = img.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect();
        Self::new(h as usize, w as usize, pixels)
    }

    /// Writes an 8-bit grayscale PNG; values are clamped and rounded.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_u8();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer matches dimensions");
        img.save(path).map_err(|e| Error::from(e).at(path))
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    #[default]
    Consecutive,
    Spaced,
}

/// Frames drawn from one clip, all the same size.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<Frame>,
    pub patient_id: String,
    pub clip_id: String,
    pub label: usize,
    pub sampling: SamplingMode,
}

impl FrameSequence {
    pub fn new(
        frames: Vec<Frame>,
        patient_id: impl Into<String>,
        clip_id: impl Into<String>,
        label: usize,
        sampling: SamplingMode,
    ) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Dimension("frame sequence is empty".into()))?;
        if frames
            .iter()
            .any(|f| f.height != first.height || f.width != first.width)
        {
            return Err(Error::Dimension("frames in a sequence differ in size".into()));
        }
        Ok(Self {
            frames,
            patient_id: patient_id.into(),
            clip_id: clip_id.into(),
            label,
            sampling,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_lossless_for_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.png");
        let pixels: Vec<f64> = (0..12).map(|v| f64::from(v * 20) / 255.0).collect();
        let frame = Frame::new(3, 4, pixels).unwrap();
        frame.save_png(&path).unwrap();
        assert_eq!(Frame::load_png(&path).unwrap(), frame);
    }

    #[test]
    fn sequence_requires_uniform_sizes() {
        let a = Frame::filled(2, 2, 0.0);
        let b = Frame::filled(3, 2, 0.0);
        assert!(FrameSequence::new(vec![a.clone(), b], "p", "c", 0, SamplingMode::Consecutive).is_err());
        assert!(FrameSequence::new(vec![], "p", "c", 0, SamplingMode::Consecutive).is_err());
        assert!(FrameSequence::new(vec![a.clone(), a], "p", "c", 0, SamplingMode::Spaced).is_ok());
    }
}
