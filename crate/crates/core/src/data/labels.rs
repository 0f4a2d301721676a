use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NED12: [&str; 12] = [
    "APICAL_4C_LVRV",
    "APICAL_5C",
    "APICAL_3C_RV",
    "APICAL_3C_LV",
    "APICAL_2C_LV",
    "PLAX_LV",
    "PLAX_RV_IN",
    "PLAX_RV_OUT",
    "PSAX_APEX",
    "PSAX_PAPS",
    "PSAX_MV",
    "PSAX_AV",
];

const NED16_EXTRA: [&str; 4] = ["BRANCH_PA", "DUCTAL_CUT", "ARCH", "SUBCOSTAL_IVC"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LabelPreset {
    Ned12,
    Ned16,
}

/// Ordered list of viewpoint class names; a class label is its position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn preset(preset: LabelPreset) -> Self {
        let names = match preset {
            LabelPreset::Ned12 => NED12.to_vec(),
            LabelPreset::Ned16 => NED12.iter().chain(&NED16_EXTRA).copied().collect(),
        };
        Self {
            names: names.into_iter().map(String::from).collect(),
        }
    }

    pub fn custom(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("label set is empty".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.contains(['/', '\\', ',']) {
                return Err(Error::Config(format!("invalid label name {n:?}")));
            }
            if names[..i].contains(n) {
                return Err(Error::Config(format!("duplicate label {n:?}")));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, label: usize) -> &str {
        &self.names[label]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownLabel {
                label: name.to_string(),
                valid: self.names.clone(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_have_expected_sizes_and_order() {
        let ned12 = LabelSet::preset(LabelPreset::Ned12);
        let ned16 = LabelSet::preset(LabelPreset::Ned16);
        assert_eq!(ned12.len(), 12);
        assert_eq!(ned16.len(), 16);
        assert_eq!(&ned16.names()[..12], ned12.names());
        assert_eq!(ned12.name(0), "APICAL_4C_LVRV");
        assert_eq!(ned16.name(15), "SUBCOSTAL_IVC");
        assert_eq!(ned12.index_of("PSAX_MV").unwrap(), 10);
    }

    #[test]
    fn unknown_label_lists_valid_ones() {
        let err = LabelSet::preset(LabelPreset::Ned12).index_of("ARCH").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("ARCH") && msg.contains("PSAX_AV"), "{msg}");
    }

    #[test]
    fn custom_rejects_duplicates() {
        assert!(LabelSet::custom(vec!["A".into(), "A".into()]).is_err());
        assert!(LabelSet::custom(vec![]).is_err());
    }
}
