use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::frame::Frame;
use super::index::{ClipKey, DatasetIndex, MANIFEST_NAME};
use super::labels::{LabelPreset, LabelSet};
use crate::error::{Error, Result};
use crate::seeding::rng_for;

/// Parameters of the synthetic echo-like dataset.
///
/// Each class has a static arrangement of bright ellipses plus one "valve"
/// ellipse whose brightness oscillates over time. Classes in an ambiguous
/// pair share the arrangement exactly and differ only in the oscillation
/// period, so a single frame cannot tell them apart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub n_patients: usize,
    /// Clips per patient for every class.
    pub clips_per_patient: usize,
    pub frames_per_clip: usize,
    pub image_size: usize,
    pub ambiguous_pairs: Vec<[usize; 2]>,
    pub noise_level: f64,
    pub seed: u64,
    /// Class names; defaults to the leading entries of the NED-16 list.
    pub labels: Option<Vec<String>>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 12,
            n_patients: 20,
            clips_per_patient: 4,
            frames_per_clip: 16,
            image_size: 32,
            // (PSAX_MV, PSAX_PAPS) and (APICAL_4C_LVRV, APICAL_5C)
            ambiguous_pairs: vec![[10, 9], [0, 1]],
            noise_level: 0.05,
            seed: 0,
            labels: None,
        }
    }
}

#[derive(Clone, Debug)]
struct Blob {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angle: f64,
    intensity: f64,
}

impl Blob {
    fn value(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.rx;
        let v = (-dx * s + dy * c) / self.ry;
        self.intensity * (-0.5 * (u * u + v * v)).exp()
    }
}

#[derive(Clone, Debug)]
struct Template {
    statics: Vec<Blob>,
    valve: Blob,
}

/// Spatial template and motion program of one class.
#[derive(Clone, Debug)]
pub struct ClassDesign {
    pub template: usize,
    /// Oscillation period of the valve, in frames.
    pub period: f64,
}

#[derive(Clone, Copy, Debug)]
struct Jitter {
    gain: f64,
    dx: f64,
    dy: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.n_patients == 0 || self.clips_per_patient == 0 {
            return fail("patients and clips per patient must be positive".into());
        }
        if self.frames_per_clip < 8 {
            return fail(format!("frames_per_clip must be at least 8, got {}", self.frames_per_clip));
        }
        if self.image_size < 8 {
            return fail(format!("image_size must be at least 8, got {}", self.image_size));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return fail(format!("invalid noise_level {}", self.noise_level));
        }
        let mut used = vec![false; self.n_classes];
        for &[a, b] in &self.ambiguous_pairs {
            if a >= self.n_classes || b >= self.n_classes || a == b {
                return fail(format!("invalid ambiguous pair ({a}, {b})"));
            }
            for c in [a, b] {
                if std::mem::replace(&mut used[c], true) {
                    return fail(format!("class {c} appears in more than one ambiguous pair"));
                }
            }
        }
        self.label_set()?;
        Ok(())
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        let names = match &self.labels {
            Some(names) => names.clone(),
            None if self.n_classes <= 16 => LabelSet::preset(LabelPreset::Ned16).names()[..self.n_classes].to_vec(),
            None => (0..self.n_classes).map(|c| format!("CLASS_{c:02}")).collect(),
        };
        if names.len() != self.n_classes {
            return Err(Error::Config(format!(
                "{} labels given for {} classes",
                names.len(),
                self.n_classes
            )));
        }
        LabelSet::custom(names)
    }

    /// Template and period per class. Pair members share the template of the
    /// first member; the first oscillates once per clip, the second every
    /// four frames.
    pub fn class_designs(&self) -> Vec<ClassDesign> {
        let mut designs: Vec<ClassDesign> = (0..self.n_classes)
            .map(|c| ClassDesign {
                template: c,
                period: [6.0, 8.0, 10.0][c % 3],
            })
            .collect();
        for &[a, b] in &self.ambiguous_pairs {
            designs[a].period = self.frames_per_clip as f64;
            designs[b] = ClassDesign {
                template: a,
                period: 4.0,
            };
        }
        designs
    }

    pub fn is_ambiguous(&self, class: usize) -> bool {
        self.ambiguous_pairs.iter().any(|p| p.contains(&class))
    }

    pub fn n_clips(&self) -> usize {
        self.n_classes * self.n_patients * self.clips_per_patient
    }

    fn template(&self, id: usize) -> Template {
        let mut rng = rng_for(self.seed, &[1, id as u64]);
        let s = self.image_size as f64;
        let blob = |rng: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64, r: (f64, f64), i: (f64, f64)| Blob {
            cx: rng.random_range(lo..hi) * s,
            cy: rng.random_range(lo..hi) * s,
            rx: rng.random_range(r.0..r.1) * s,
            ry: rng.random_range(r.0..r.1) * s,
            angle: rng.random_range(0.0..std::f64::consts::PI),
            intensity: rng.random_range(i.0..i.1),
        };
        let n = rng.random_range(2..=4);
        let statics = (0..n).map(|_| blob(&mut rng, 0.15, 0.85, (0.06, 0.18), (0.3, 0.75))).collect();
        let valve = blob(&mut rng, 0.3, 0.7, (0.07, 0.11), (0.9, 1.0));
        Template { statics, valve }
    }

    fn patient_jitter(&self, patient: usize) -> Jitter {
        let mut rng = rng_for(self.seed, &[2, patient as u64]);
        Jitter {
            gain: rng.random_range(0.85..1.15),
            dx: rng.random_range(-1.0..1.0),
            dy: rng.random_range(-1.0..1.0),
        }
    }

    /// Renders every frame of one clip without noise or quantization.
    fn render_clean(&self, template: &Template, period: f64, phase: f64, jitter: Jitter) -> Vec<Frame> {
        let n = self.image_size;
        (0..self.frames_per_clip)
            .map(|t| {
                let level = 0.5 + 0.5 * (TAU * t as f64 / period + phase).sin();
                let mut pixels = Vec::with_capacity(n * n);
                for row in 0..n {
                    for col in 0..n {
                        let (x, y) = (col as f64 - jitter.dx, row as f64 - jitter.dy);
                        let mut v: f64 = template.statics.iter().map(|b| b.value(x, y)).sum();
                        v += level * template.valve.value(x, y);
                        pixels.push(jitter.gain * v);
                    }
                }
                Frame::new(n, n, pixels).expect("square frame")
            })
            .collect()
    }

    pub fn patient_id(&self, patient: usize) -> String {
        let width = (self.n_patients.max(1) - 1).to_string().len().max(3);
        format!("P{patient:0width$}")
    }

    pub fn clip_id(class: usize, clip: usize) -> String {
        format!("c{class:02}_{clip:02}")
    }
}

/// Renders one clip's frames, including noise; `patient`, `class` and `clip`
/// select the deterministic random streams.
pub fn render_clip(spec: &SyntheticSpec, patient: usize, class: usize, clip: usize) -> Vec<Frame> {
    let designs = spec.class_designs();
    let design = &designs[class];
    let template = spec.template(design.template);
    let mut rng = rng_for(spec.seed, &[3, patient as u64, class as u64, clip as u64]);
    let phase = rng.random_range(0.0..TAU);
    let mut frames = spec.render_clean(&template, design.period, phase, spec.patient_jitter(patient));
    if spec.noise_level > 0.0 {
        let noise = Normal::new(0.0, spec.noise_level).expect("validated noise level");
        for f in &mut frames {
            for v in f.pixels_mut() {
                *v += noise.sample(&mut rng);
            }
        }
    }
    for f in &mut frames {
        let q: Vec<f64> = f.to_u8().into_iter().map(|b| f64::from(b) / 255.0).collect();
        f.pixels_mut().copy_from_slice(&q);
    }
    frames
}

/// Writes the dataset under `root` in the `patient/viewpoint/clip` layout,
/// plus a manifest, and returns the index it declares.
pub fn gen_synthetic(spec: &SyntheticSpec, root: &Path) -> Result<DatasetIndex> {
    spec.validate()?;
    let labels = spec.label_set()?;
    let mut groups: BTreeMap<ClipKey, Vec<(usize, PathBuf)>> = BTreeMap::new();
    for patient in 0..spec.n_patients {
        let pid = spec.patient_id(patient);
        for class in 0..spec.n_classes {
            let view = labels.name(class);
            for clip in 0..spec.clips_per_patient {
                let cid = SyntheticSpec::clip_id(class, clip);
                let dir = root.join(&pid).join(view).join(&cid);
                fs::create_dir_all(&dir).map_err(|e| Error::from(e).at(&dir))?;
                let mut paths = Vec::with_capacity(spec.frames_per_clip);
                for (t, frame) in render_clip(spec, patient, class, clip).iter().enumerate() {
                    let path = dir.join(format!("frame_{t:04}.png"));
                    frame.save_png(&path)?;
                    paths.push((t, path));
                }
                groups.insert((pid.clone(), view.to_string(), cid), paths);
            }
        }
    }
    let index = DatasetIndex::build(groups, &labels)?;
    index.write_manifest(&root.join(MANIFEST_NAME))?;
    fs::write(
        root.join("synthetic.json"),
        serde_json::to_string_pretty(spec)?,
    )
    .map_err(|e| Error::from(e).at(root))?;
    Ok(index)
}
