use rand::Rng;
use serde::{Deserialize, Serialize};

use super::frame::{Frame, FrameSequence};
use crate::error::{Error, Result};

/// Sequence-wide augmentation settings. Every range is sampled once per
/// sequence and the resulting transform is applied to all of its frames.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    /// Rotation angle is drawn from `[0, rotation_max_deg]`.
    pub rotation_max_deg: f64,
    pub auto_contrast: bool,
    /// Isotropic zoom factor range `[lo, hi]`.
    pub scale_range: Option<[f64; 2]>,
    /// Maximum shift as a fraction of the image size, per axis.
    pub shift_range: Option<f64>,
    pub hflip_prob: Option<f64>,
    pub vflip_prob: Option<f64>,
}

impl AugmentSpec {
    /// Rotation up to 25° plus auto-contrast.
    pub fn rotate_and_contrast() -> Self {
        Self {
            rotation_max_deg: 25.0,
            auto_contrast: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..360.0).contains(&self.rotation_max_deg) {
            return Err(Error::Config(format!(
                "rotation_max_deg {} outside [0, 360)",
                self.rotation_max_deg
            )));
        }
        if let Some([lo, hi]) = self.scale_range {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Config(format!("invalid scale_range [{lo}, {hi}]")));
            }
        }
        if let Some(s) = self.shift_range {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Config(format!("shift_range {s} outside [0, 1]")));
            }
        }
        for (name, p) in [("hflip_prob", self.hflip_prob), ("vflip_prob", self.vflip_prob)] {
            if let Some(p) = p {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Config(format!("{name} {p} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }

    /// Draws one concrete transform for an `height × width` sequence.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, height: usize, width: usize) -> SequenceTransform {
        let angle_deg = if self.rotation_max_deg > 0.0 {
            rng.random_range(0.0..=self.rotation_max_deg)
        } else {
            0.0
        };
        let scale = match self.scale_range {
            Some([lo, hi]) if lo < hi => rng.random_range(lo..=hi),
            Some([lo, _]) => lo,
            None => 1.0,
        };
        let shift = match self.shift_range {
            Some(f) if f > 0.0 => (
                rng.random_range(-f..=f) * width as f64,
                rng.random_range(-f..=f) * height as f64,
            ),
            _ => (0.0, 0.0),
        };
        let mut coin = |p: Option<f64>| p.is_some_and(|p| rng.random::<f64>() < p);
        let hflip = coin(self.hflip_prob);
        let vflip = coin(self.vflip_prob);
        SequenceTransform {
            angle_deg,
            scale,
            shift,
            hflip,
            vflip,
            auto_contrast: self.auto_contrast,
        }
    }
}

/// A fully drawn augmentation. Geometry is applied first (flip, zoom and
/// counter-clockwise rotation about the image centre, then shift), then the
/// contrast stretch computed over the whole sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceTransform {
    pub angle_deg: f64,
    pub scale: f64,
    /// `(dx, dy)` in pixels.
    pub shift: (f64, f64),
    pub hflip: bool,
    pub vflip: bool,
    pub auto_contrast: bool,
}

impl SequenceTransform {
    pub fn identity() -> Self {
        Self {
            angle_deg: 0.0,
            scale: 1.0,
            shift: (0.0, 0.0),
            hflip: false,
            vflip: false,
            auto_contrast: false,
        }
    }

    pub fn is_geometric_identity(&self) -> bool {
        self.angle_deg == 0.0 && self.scale == 1.0 && self.shift == (0.0, 0.0) && !self.hflip && !self.vflip
    }

    pub fn warp(&self, frame: &Frame) -> Frame {
        if self.is_geometric_identity() {
            return frame.clone();
        }
        let (h, w) = (frame.height(), frame.width());
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let (sin, cos) = self.angle_deg.to_radians().sin_cos();
        let mut out = Vec::with_capacity(h * w);
        for row in 0..h {
            for col in 0..w {
                let u = col as f64 - cx - self.shift.0;
                let v = row as f64 - cy - self.shift.1;
                let mut sx = (u * cos - v * sin) / self.scale;
                let mut sy = (u * sin + v * cos) / self.scale;
                if self.hflip {
                    sx = -sx;
                }
                if self.vflip {
                    sy = -sy;
                }
                out.push(bilinear_zero(frame, sy + cy, sx + cx));
            }
        }
        Frame::new(h, w, out).expect("same extent as input")
    }

    pub fn apply(&self, frames: &[Frame]) -> Vec<Frame> {
        let mut out: Vec<Frame> = frames.iter().map(|f| self.warp(f)).collect();
        if self.auto_contrast {
            let (lo, hi) = value_range(out.iter().flat_map(|f| f.pixels().iter().copied()));
            for f in &mut out {
                stretch(f, lo, hi);
            }
        }
        out
    }
}

/// Bilinear sample at fractional `(row, col)`; neighbours outside the image
/// contribute zero.
fn bilinear_zero(frame: &Frame, row: f64, col: f64) -> f64 {
    let (r0, c0) = (row.floor(), col.floor());
    let (fr, fc) = (row - r0, col - c0);
    let at = |r: f64, c: f64| -> f64 {
        if r < 0.0 || c < 0.0 || r >= frame.height() as f64 || c >= frame.width() as f64 {
            0.0
        } else {
            frame.get(r as usize, c as usize)
        }
    };
    (1.0 - fr) * ((1.0 - fc) * at(r0, c0) + fc * at(r0, c0 + 1.0))
        + fr * ((1.0 - fc) * at(r0 + 1.0, c0) + fc * at(r0 + 1.0, c0 + 1.0))
}

fn value_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn stretch(frame: &mut Frame, lo: f64, hi: f64) {
    if hi - lo <= 0.0 {
        return;
    }
    let span = hi - lo;
    frame.pixels_mut().iter_mut().for_each(|v| *v = (*v - lo) / span);
}

/// Linearly maps the frame's minimum to 0 and maximum to 1. Constant frames
/// are returned unchanged.
pub fn auto_contrast(frame: &Frame) -> Frame {
    let (lo, hi) = value_range(frame.pixels().iter().copied());
    let mut out = frame.clone();
    stretch(&mut out, lo, hi);
    out
}

/// Draws one transform and applies it to every frame of the sequence.
pub fn augment_sequence<R: Rng + ?Sized>(seq: &FrameSequence, spec: &AugmentSpec, rng: &mut R) -> FrameSequence {
    let first = &seq.frames[0];
    let transform = spec.draw(rng, first.height(), first.width());
    FrameSequence {
        frames: transform.apply(&seq.frames),
        ..seq.clone()
    }
}

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn resize(frame: &Frame, height: usize, width: usize) -> Result<Frame> {
    if height == 0 || width == 0 {
        return Err(Error::Config("resize target must be non-empty".into()));
    }
    if (height, width) == (frame.height(), frame.width()) {
        return Ok(frame.clone());
    }
    let source = |dst: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Vec::with_capacity(height * width);
    for row in 0..height {
        let (r0, r1, fr) = source(row, frame.height(), height);
        for col in 0..width {
            let (c0, c1, fc) = source(col, frame.width(), width);
            let top = (1.0 - fc) * frame.get(r0, c0) + fc * frame.get(r0, c1);
            let bottom = (1.0 - fc) * frame.get(r1, c0) + fc * frame.get(r1, c1);
            out.push((1.0 - fr) * top + fr * bottom);
        }
    }
    Frame::new(height, width, out)
}

pub fn crop(frame: &Frame, top: usize, left: usize, height: usize, width: usize) -> Result<Frame> {
    if top + height > frame.height() || left + width > frame.width() {
        return Err(Error::Config(format!(
            "crop {height}×{width} at ({top}, {left}) exceeds {}×{}",
            frame.height(),
            frame.width()
        )));
    }
    let pixels = (top..top + height)
        .flat_map(|r| (left..left + width).map(move |c| (r, c)))
        .map(|(r, c)| frame.get(r, c))
        .collect();
    Frame::new(height, width, pixels)
}

/// Crop origin inside a `resized` image: random with an rng, centred without.
pub fn crop_origin<R: Rng + ?Sized>(
    resized: (usize, usize),
    crop_to: (usize, usize),
    rng: Option<&mut R>,
) -> Result<(usize, usize)> {
    if crop_to.0 > resized.0 || crop_to.1 > resized.1 || crop_to.0 == 0 || crop_to.1 == 0 {
        return Err(Error::Config(format!(
            "crop {}×{} does not fit in resize {}×{}",
            crop_to.0, crop_to.1, resized.0, resized.1
        )));
    }
    let (dr, dc) = (resized.0 - crop_to.0, resized.1 - crop_to.1);
    Ok(match rng {
        Some(rng) => (rng.random_range(0..=dr), rng.random_range(0..=dc)),
        None => (dr / 2, dc / 2),
    })
}

pub fn resize_then_crop<R: Rng + ?Sized>(
    frame: &Frame,
    resize_to: (usize, usize),
    crop_to: (usize, usize),
    rng: Option<&mut R>,
) -> Result<Frame> {
    let (top, left) = crop_origin(resize_to, crop_to, rng)?;
    let resized = resize(frame, resize_to.0, resize_to.1)?;
    crop(&resized, top, left, crop_to.0, crop_to.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::frame::SamplingMode;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(h: usize, w: usize, values: &[f64]) -> Frame {
        Frame::new(h, w, values.to_vec()).unwrap()
    }

    fn seq(frames: Vec<Frame>) -> FrameSequence {
        FrameSequence::new(frames, "p", "c", 0, SamplingMode::Consecutive).unwrap()
    }

    #[test]
    fn identity_spec_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = seq(vec![grid(2, 2, &[0.1, 0.2, 0.3, 0.4]), grid(2, 2, &[0.9, 0.8, 0.7, 0.6])]);
        assert_eq!(augment_sequence(&s, &AugmentSpec::default(), &mut rng), s);
    }

    #[test]
    fn identical_frames_stay_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = Frame::new(5, 5, (0..25).map(|v| v as f64 / 25.0).collect()).unwrap();
        let spec = AugmentSpec {
            rotation_max_deg: 40.0,
            auto_contrast: true,
            scale_range: Some([0.8, 1.2]),
            shift_range: Some(0.1),
            hflip_prob: Some(0.5),
            vflip_prob: Some(0.5),
        };
        let out = augment_sequence(&seq(vec![f.clone(), f]), &spec, &mut rng);
        assert_eq!(out.frames[0], out.frames[1]);
    }

    #[test]
    fn quarter_turn_of_asymmetric_pattern() {
        let f = grid(3, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let t = SequenceTransform {
            angle_deg: 90.0,
            ..SequenceTransform::identity()
        };
        let expect = [3.0, 6.0, 9.0, 2.0, 5.0, 8.0, 1.0, 4.0, 7.0];
        for (a, b) in t.warp(&f).pixels().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn rotation_pads_with_zero() {
        let f = Frame::filled(4, 4, 1.0);
        let t = SequenceTransform {
            angle_deg: 45.0,
            ..SequenceTransform::identity()
        };
        let out = t.warp(&f);
        assert!(out.get(0, 0) < 0.5);
        assert!((out.get(1, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flips_and_shift() {
        let f = grid(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let h = SequenceTransform {
            hflip: true,
            ..SequenceTransform::identity()
        };
        assert_eq!(h.warp(&f).pixels(), &[3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
        let v = SequenceTransform {
            vflip: true,
            ..SequenceTransform::identity()
        };
        assert_eq!(v.warp(&f).pixels(), &[4.0, 5.0, 6.0, 1.0, 2.0, 3.0]);
        let s = SequenceTransform {
            shift: (1.0, 0.0),
            ..SequenceTransform::identity()
        };
        assert_eq!(s.warp(&f).pixels(), &[0.0, 1.0, 2.0, 0.0, 4.0, 5.0]);
    }

    #[test]
    fn auto_contrast_cases() {
        let full = grid(1, 3, &[0.0, 0.3, 1.0]);
        assert_eq!(auto_contrast(&full), full);
        let flat = Frame::filled(2, 2, 0.5);
        assert_eq!(auto_contrast(&flat), flat);
        let mid = grid(1, 3, &[0.2, 0.5, 0.6]);
        let out = auto_contrast(&mid);
        for (a, x) in out.pixels().iter().zip(mid.pixels()) {
            assert!((a - (x - 0.2) / 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn contrast_is_sequence_wide() {
        let t = SequenceTransform {
            auto_contrast: true,
            ..SequenceTransform::identity()
        };
        let out = t.apply(&[grid(1, 2, &[0.2, 0.4]), grid(1, 2, &[0.4, 0.6])]);
        assert!((out[0].pixels()[0]).abs() < 1e-12);
        assert!((out[0].pixels()[1] - 0.5).abs() < 1e-12);
        assert!((out[1].pixels()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn resize_same_size_is_unchanged() {
        let f = grid(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        let out = resize_then_crop::<ChaCha8Rng>(&f, (2, 2), (2, 2), None).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn checkerboard_upsample_matches_bilinear_formula() {
        let f = grid(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let out = resize(&f, 4, 4).unwrap();
        // half-pixel centres map output 0..3 to source 0, 0.25, 0.75, 1
        let src = [0.0, 0.25, 0.75, 1.0];
        for r in 0..4 {
            for c in 0..4 {
                let (y, x) = (src[r], src[c]);
                let expect = x + y - 2.0 * x * y;
                assert!((out.get(r, c) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn center_crop_takes_middle() {
        let f = Frame::new(6, 6, (0..36).map(f64::from).collect()).unwrap();
        let out = resize_then_crop::<ChaCha8Rng>(&f, (6, 6), (4, 4), None).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(out.get(r, c), f.get(r + 1, c + 1));
            }
        }
    }

    #[test]
    fn crop_larger_than_resize_is_config_error() {
        let f = Frame::filled(4, 4, 0.0);
        assert!(matches!(
            resize_then_crop::<ChaCha8Rng>(&f, (4, 4), (5, 4), None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(AugmentSpec::rotate_and_contrast().validate().is_ok());
        let bad = AugmentSpec {
            rotation_max_deg: 360.0,
            ..AugmentSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentSpec {
            scale_range: Some([1.2, 0.8]),
            ..AugmentSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn auto_contrast_is_idempotent(values in proptest::collection::vec(0.0f64..1.0, 1..40)) {
            let f = Frame::new(1, values.len(), values).unwrap();
            let once = auto_contrast(&f);
            let twice = auto_contrast(&once);
            for (a, b) in once.pixels().iter().zip(twice.pixels()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
