use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::index::DatasetIndex;
use crate::error::{Error, Result};
use crate::seeding::rng_for;

/// Produces train/test clip positions for each fold of a dataset.
pub trait Splitter {
    fn folds(&self) -> usize;
    fn split(&self, index: &DatasetIndex, fold: usize) -> Result<(Vec<usize>, Vec<usize>)>;
}

/// Patient-wise partition: fold `f` tests on `test_patients[f]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub test_patients: Vec<Vec<String>>,
}

pub fn patient_kfold(index: &DatasetIndex, k: usize, seed: u64) -> Result<FoldPlan> {
    FoldPlan::from_patients(index.patients(), k, seed)
}

impl FoldPlan {
    /// Shuffles the sorted patient list with `seed` and deals it round-robin.
    pub fn from_patients(mut patients: Vec<String>, k: usize, seed: u64) -> Result<Self> {
        patients.sort();
        patients.dedup();
        if k < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {k}")));
        }
        if patients.len() < k {
            return Err(Error::Config(format!(
                "{} patients cannot fill {k} folds",
                patients.len()
            )));
        }
        patients.shuffle(&mut rng_for(seed, &[0xF01D]));
        let mut test_patients = vec![Vec::new(); k];
        for (i, p) in patients.into_iter().enumerate() {
            test_patients[i % k].push(p);
        }
        for fold in &mut test_patients {
            fold.sort();
        }
        Ok(Self { k, seed, test_patients })
    }

    pub fn fold_of(&self, patient: &str) -> Option<usize> {
        self.test_patients
            .iter()
            .position(|f| f.iter().any(|p| p == patient))
    }

    /// Checks that the test sets are disjoint and cover exactly `patients`.
    pub fn verify_partition(&self, patients: &[String]) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (fold, set) in self.test_patients.iter().enumerate() {
            for p in set {
                if !seen.insert(p.as_str()) {
                    return Err(Error::Leakage {
                        fold,
                        patients: vec![p.clone()],
                    });
                }
            }
        }
        let expected: BTreeSet<&str> = patients.iter().map(String::as_str).collect();
        if seen != expected {
            return Err(Error::Data("fold plan does not cover the patient set".into()));
        }
        Ok(())
    }
}

impl Splitter for FoldPlan {
    fn folds(&self) -> usize {
        self.k
    }

    fn split(&self, index: &DatasetIndex, fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let test = self
            .test_patients
            .get(fold)
            .ok_or_else(|| Error::Index(format!("fold {fold} of {}", self.k)))?;
        let (mut train, mut held) = (Vec::new(), Vec::new());
        for (i, clip) in index.clips.iter().enumerate() {
            if test.contains(&clip.patient_id) {
                held.push(i);
            } else {
                train.push(i);
            }
        }
        Ok((train, held))
    }
}

/// Clip-wise K-fold that ignores patient identity. Clips of one patient end
/// up on both sides of a split, so this exists to exercise leakage checks.
#[derive(Clone, Debug)]
pub struct ClipKFold {
    pub k: usize,
    pub seed: u64,
}

impl Splitter for ClipKFold {
    fn folds(&self) -> usize {
        self.k
    }

    fn split(&self, index: &DatasetIndex, fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut order: Vec<usize> = (0..index.clips.len()).collect();
        order.shuffle(&mut rng_for(self.seed, &[0xC11F]));
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (pos, i) in order.into_iter().enumerate() {
            if pos % self.k == fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((train, test))
    }
}

/// Fails with [`Error::Leakage`] naming every patient that has clips on both
/// sides of the split.
pub fn verify_patient_disjoint(index: &DatasetIndex, fold: usize, train: &[usize], test: &[usize]) -> Result<()> {
    let mut side: HashMap<&str, u8> = HashMap::new();
    for (&i, bit) in train.iter().map(|i| (i, 1u8)).chain(test.iter().map(|i| (i, 2u8))) {
        let clip = index
            .clips
            .get(i)
            .ok_or_else(|| Error::Index(format!("clip {i} of {}", index.clips.len())))?;
        *side.entry(clip.patient_id.as_str()).or_default() |= bit;
    }
    let mut leaked: Vec<String> = side
        .into_iter()
        .filter(|&(_, s)| s == 3)
        .map(|(p, _)| p.to_string())
        .collect();
    if leaked.is_empty() {
        Ok(())
    } else {
        leaked.sort();
        Err(Error::Leakage { fold, patients: leaked })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("P{i:03}")).collect()
    }

    #[test]
    fn one_patient_per_fold() {
        let plan = FoldPlan::from_patients(ids(5), 5, 3).unwrap();
        assert!(plan.test_patients.iter().all(|f| f.len() == 1));
        plan.verify_partition(&ids(5)).unwrap();
    }

    #[test]
    fn thirty_four_patients_five_folds() {
        let plan = FoldPlan::from_patients(ids(34), 5, 11).unwrap();
        let sizes: Vec<usize> = plan.test_patients.iter().map(Vec::len).collect();
        assert!(sizes.iter().all(|s| *s == 6 || *s == 7), "{sizes:?}");
        assert_eq!(sizes.iter().sum::<usize>(), 34);
        plan.verify_partition(&ids(34)).unwrap();
    }

    #[test]
    fn deterministic_for_seed() {
        let a = FoldPlan::from_patients(ids(20), 5, 7).unwrap();
        assert_eq!(a, FoldPlan::from_patients(ids(20), 5, 7).unwrap());
        assert_ne!(a, FoldPlan::from_patients(ids(20), 5, 8).unwrap());
    }

    #[test]
    fn too_few_patients() {
        assert!(matches!(FoldPlan::from_patients(ids(3), 5, 0), Err(Error::Config(_))));
    }
}
