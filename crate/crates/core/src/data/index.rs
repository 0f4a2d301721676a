use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::frame::Frame;
use super::labels::LabelSet;
use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.csv";
const MANIFEST_HEADER: [&str; 5] = ["patient_id", "viewpoint", "clip_id", "frame_index", "path"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClipRecord {
    pub patient_id: String,
    pub viewpoint: String,
    /// Position of `viewpoint` in the index's label set.
    pub label: usize,
    pub clip_id: String,
    pub frame_paths: Vec<PathBuf>,
}

impl ClipRecord {
    pub fn len(&self) -> usize {
        self.frame_paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_paths.is_empty()
    }

    pub fn load_frames(&self, indices: &[usize]) -> Result<Vec<Frame>> {
        indices
            .iter()
            .map(|&i| {
                let path = self.frame_paths.get(i).ok_or_else(|| {
                    Error::Index(format!("frame {i} of clip {:?} ({} frames)", self.clip_id, self.len()))
                })?;
                Frame::load_png(path)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    pub clips: Vec<ClipRecord>,
    pub label_set: LabelSet,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    patient_id: String,
    viewpoint: String,
    clip_id: String,
    frame_index: usize,
    path: String,
}

pub(crate) type ClipKey = (String, String, String);

impl DatasetIndex {
    /// Builds a validated index from `(patient, viewpoint, clip) → [(frame_index, path)]`.
    pub(crate) fn build(groups: BTreeMap<ClipKey, Vec<(usize, PathBuf)>>, label_set: &LabelSet) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut clips = Vec::with_capacity(groups.len());
        for ((patient_id, viewpoint, clip_id), mut frames) in groups {
            let label = label_set.index_of(&viewpoint)?;
            if !seen.insert((patient_id.clone(), clip_id.clone())) {
                return Err(Error::DuplicateClip {
                    patient: patient_id,
                    clip: clip_id,
                });
            }
            if frames.is_empty() {
                log::warn!("skipping empty clip {patient_id}/{viewpoint}/{clip_id}");
                continue;
            }
            frames.sort();
            if let Some(w) = frames.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(Error::Data(format!(
                    "clip {patient_id}/{clip_id} lists frame index {} twice",
                    w[0].0
                )));
            }
            clips.push(ClipRecord {
                patient_id,
                viewpoint,
                label,
                clip_id,
                frame_paths: frames.into_iter().map(|(_, p)| p).collect(),
            });
        }
        Ok(Self {
            clips,
            label_set: label_set.clone(),
        })
    }

    /// Sorted, de-duplicated patient ids.
    pub fn patients(&self) -> Vec<String> {
        let mut p: Vec<String> = self.clips.iter().map(|c| c.patient_id.clone()).collect();
        p.sort();
        p.dedup();
        p
    }

    pub fn n_frames(&self) -> usize {
        self.clips.iter().map(ClipRecord::len).sum()
    }

    /// Writes a manifest whose paths are relative to the manifest's directory
    /// when possible.
    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)
            .map_err(|e| Error::from(e).at(path))?;
        for clip in &self.clips {
            for (i, frame) in clip.frame_paths.iter().enumerate() {
                let shown = frame.strip_prefix(base).unwrap_or(frame);
                w.serialize(ManifestRow {
                    patient_id: clip.patient_id.clone(),
                    viewpoint: clip.viewpoint.clone(),
                    clip_id: clip.clip_id.clone(),
                    frame_index: i,
                    path: shown.to_string_lossy().replace('\\', "/"),
                })?;
            }
        }
        w.flush().map_err(|e| Error::from(e).at(path))
    }
}

/// Loads an index from a manifest file, or from a directory. A directory
/// containing `manifest.csv` is read through the manifest; otherwise the
/// `patient/viewpoint/clip/frame_NNNN.png` tree is walked.
pub fn load_index(path: &Path, label_set: &LabelSet) -> Result<DatasetIndex> {
    if path.is_file() {
        return load_manifest(path, label_set);
    }
    let manifest = path.join(MANIFEST_NAME);
    if manifest.is_file() {
        return load_manifest(&manifest, label_set);
    }
    if !path.is_dir() {
        return Err(Error::Data(format!("{} is neither a directory nor a manifest", path.display())));
    }
    load_tree(path, label_set)
}

fn load_manifest(path: &Path, label_set: &LabelSet) -> Result<DatasetIndex> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::from(e).at(path))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != MANIFEST_HEADER {
        return Err(Error::Data(format!(
            "manifest header {header:?} does not match {MANIFEST_HEADER:?}"
        ))
        .at(path));
    }
    let mut groups: BTreeMap<ClipKey, Vec<(usize, PathBuf)>> = BTreeMap::new();
    for row in reader.deserialize() {
        let row: ManifestRow = row.map_err(|e| Error::from(e).at(path))?;
        let frame = PathBuf::from(&row.path);
        let frame = if frame.is_absolute() { frame } else { base.join(frame) };
        groups
            .entry((row.patient_id, row.viewpoint, row.clip_id))
            .or_default()
            .push((row.frame_index, frame));
    }
    DatasetIndex::build(groups, label_set)
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::from(e).at(dir))? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            out.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

/// Frame index from names like `frame_0012.png` or `12.png`.
fn frame_index(name: &str) -> Option<usize> {
    let stem = name.strip_suffix(".png").or_else(|| name.strip_suffix(".PNG"))?;
    let digits = stem.rsplit(|c: char| !c.is_ascii_digit()).next()?;
    digits.parse().ok()
}

fn load_tree(root: &Path, label_set: &LabelSet) -> Result<DatasetIndex> {
    let mut groups: BTreeMap<ClipKey, Vec<(usize, PathBuf)>> = BTreeMap::new();
    for (patient, patient_dir) in sorted_subdirs(root)? {
        for (viewpoint, view_dir) in sorted_subdirs(&patient_dir)? {
            for (clip, clip_dir) in sorted_subdirs(&view_dir)? {
                let mut frames = Vec::new();
                for entry in fs::read_dir(&clip_dir).map_err(|e| Error::from(e).at(&clip_dir))? {
                    let entry = entry?;
                    let name = entry.file_name().to_string_lossy().into_owned();
                    match frame_index(&name) {
                        Some(i) if entry.file_type()?.is_file() => frames.push((i, entry.path())),
                        _ => log::debug!("ignoring {}", entry.path().display()),
                    }
                }
                groups
                    .entry((patient.clone(), viewpoint.clone(), clip))
                    .or_default()
                    .extend(frames);
            }
        }
    }
    DatasetIndex::build(groups, label_set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::labels::LabelPreset;

    fn write_clip(root: &Path, patient: &str, view: &str, clip: &str, n: usize) {
        let dir = root.join(patient).join(view).join(clip);
        fs::create_dir_all(&dir).unwrap();
        for i in 0..n {
            Frame::filled(2, 2, i as f64 / 10.0)
                .save_png(&dir.join(format!("frame_{i:04}.png")))
                .unwrap();
        }
    }

    fn ned12() -> LabelSet {
        LabelSet::preset(LabelPreset::Ned12)
    }

    #[test]
    fn single_clip_directory() {
        let dir = tempfile::tempdir().unwrap();
        write_clip(dir.path(), "p1", "PSAX_MV", "c1", 5);
        let index = load_index(dir.path(), &ned12()).unwrap();
        assert_eq!(index.clips.len(), 1);
        let clip = &index.clips[0];
        assert_eq!(clip.frame_paths.len(), 5);
        assert_eq!(clip.label, 10);
        assert!(clip.frame_paths[4].ends_with("frame_0004.png"));
    }

    #[test]
    fn frames_are_ordered_numerically() {
        let dir = tempfile::tempdir().unwrap();
        let clip = dir.path().join("p").join("ARCH").join("c");
        fs::create_dir_all(&clip).unwrap();
        for i in [10, 2, 1] {
            Frame::filled(1, 1, 0.0).save_png(&clip.join(format!("{i}.png"))).unwrap();
        }
        let index = load_index(dir.path(), &LabelSet::preset(LabelPreset::Ned16)).unwrap();
        let names: Vec<_> = index.clips[0]
            .frame_paths
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, ["1.png", "2.png", "10.png"]);
    }

    #[test]
    fn empty_clip_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        write_clip(dir.path(), "p1", "PSAX_MV", "c1", 2);
        write_clip(dir.path(), "p1", "PSAX_MV", "c2", 0);
        let index = load_index(dir.path(), &ned12()).unwrap();
        assert_eq!(index.clips.len(), 1);
    }

    #[test]
    fn unknown_viewpoint_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        write_clip(dir.path(), "p1", "NOT_A_VIEW", "c1", 1);
        let err = load_index(dir.path(), &ned12()).unwrap_err();
        assert!(matches!(err, Error::UnknownLabel { .. }));
        assert!(err.to_string().contains("APICAL_4C_LVRV"));
    }

    #[test]
    fn duplicate_clip_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        write_clip(dir.path(), "p1", "PSAX_MV", "c1", 1);
        write_clip(dir.path(), "p1", "PSAX_AV", "c1", 1);
        assert!(matches!(
            load_index(dir.path(), &ned12()),
            Err(Error::DuplicateClip { .. })
        ));
    }

    #[test]
    fn shuffled_manifest_matches_sorted_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let rows = [
            "p2,PSAX_AV,c9,1,p2/c9/b.png",
            "p1,PSAX_MV,c1,0,p1/c1/a.png",
            "p2,PSAX_AV,c9,0,p2/c9/a.png",
            "p1,PSAX_MV,c1,2,p1/c1/c.png",
            "p1,PSAX_MV,c1,1,p1/c1/b.png",
        ];
        let header = "patient_id,viewpoint,clip_id,frame_index,path\n";
        let mut sorted = rows.to_vec();
        sorted.sort();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        fs::write(&a, format!("{header}{}\n", rows.join("\n"))).unwrap();
        fs::write(&b, format!("{header}{}\n", sorted.join("\n"))).unwrap();
        let ia = load_index(&a, &ned12()).unwrap();
        let ib = load_index(&b, &ned12()).unwrap();
        assert_eq!(ia, ib);
        assert_eq!(ia.clips.len(), 2);
        assert!(ia.clips[0].frame_paths[2].ends_with("c.png"));
        assert_eq!(ia.patients(), ["p1", "p2"]);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        write_clip(dir.path(), "p1", "PSAX_MV", "c1", 3);
        write_clip(dir.path(), "p2", "PLAX_LV", "c7", 2);
        let from_tree = load_index(dir.path(), &ned12()).unwrap();
        from_tree.write_manifest(&dir.path().join(MANIFEST_NAME)).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST_NAME)).unwrap();
        assert!(text.starts_with("patient_id,viewpoint,clip_id,frame_index,path\n"));
        assert!(!text.contains('\r'));
        assert_eq!(load_index(dir.path(), &ned12()).unwrap(), from_tree);
    }

    #[test]
    fn frame_index_parsing() {
        assert_eq!(frame_index("frame_0007.png"), Some(7));
        assert_eq!(frame_index("12.png"), Some(12));
        assert_eq!(frame_index("notes.txt"), None);
        assert_eq!(frame_index("frame.png"), None);
    }
}
