use serde::{Deserialize, Serialize};

use super::config::{OptimizerKind, TrainConfig};
use super::crossval::run_fold;
use super::eval::eval_frames;
use super::metrics::MetricsReport;
use crate::data::{patient_kfold, FoldPlan, LoadedDataset, SamplingMode, SyntheticSpec};
use crate::error::{Error, Result};
use crate::models::HeadKind;

/// Single-frame classifier against sequence heads on synthetic data with
/// motion-only class pairs, repeated over training seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synthetic: SyntheticSpec,
    pub seeds: Vec<u64>,
    pub folds: usize,
    /// The fold evaluated for every seed.
    pub fold: usize,
    pub classifier: TrainConfig,
    pub heads: Vec<TrainConfig>,
}

impl ExperimentConfig {
    /// Image classifier, plain GRU and GRU-TFW on four consecutive frames,
    /// three seeds, fold 0 of five. The classifier uses Adam for 15 epochs and
    /// the heads use a much weaker L2 than the preset.
    pub fn desk() -> Self {
        let synthetic = SyntheticSpec::default();
        let c = synthetic.n_classes;
        let classifier = TrainConfig {
            optimizer: OptimizerKind::Adam,
            max_lr: 0.003,
            epochs: 15,
            ..TrainConfig::classifier(c)
        };
        let mut gru = TrainConfig::sequence(HeadKind::Gru, c);
        gru.l2 = 1e-5;
        let tfw = TrainConfig {
            model: crate::models::ModelSpec::desk(HeadKind::GruTfw, c),
            ..gru.clone()
        };
        Self {
            synthetic,
            seeds: vec![0, 1, 2],
            folds: 5,
            fold: 0,
            classifier,
            heads: vec![gru, tfw],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("experiment needs at least one seed".into()));
        }
        if self.fold >= self.folds {
            return Err(Error::Config(format!("fold {} of {}", self.fold, self.folds)));
        }
        self.classifier.validate()?;
        self.heads.iter().try_for_each(TrainConfig::validate)
    }

    pub fn ambiguous_classes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.synthetic.ambiguous_pairs.iter().flatten().copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub plan: FoldPlan,
    pub classifier: MetricsReport,
    /// Classifier accuracy over clips of ambiguous-pair classes.
    pub classifier_ambiguous: f64,
    pub heads: Vec<(HeadKind, MetricsReport)>,
    pub oracle_ambiguous: f64,
}

impl SeedOutcome {
    pub fn head(&self, kind: HeadKind) -> Option<&MetricsReport> {
        self.heads.iter().find(|(k, _)| *k == kind).map(|(_, m)| m)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub ambiguous_classes: Vec<usize>,
    pub seeds: Vec<SeedOutcome>,
}

impl ExperimentReport {
    pub fn median_classifier_ambiguous(&self) -> f64 {
        median(self.seeds.iter().map(|s| s.classifier_ambiguous).collect())
    }

    pub fn median_classifier_f1(&self) -> f64 {
        median(self.seeds.iter().map(|s| s.classifier.f1).collect())
    }

    pub fn median_f1(&self, kind: HeadKind) -> Option<f64> {
        let v: Option<Vec<f64>> = self.seeds.iter().map(|s| s.head(kind).map(|m| m.f1)).collect();
        v.map(median)
    }

    pub fn median_oracle_ambiguous(&self) -> f64 {
        median(self.seeds.iter().map(|s| s.oracle_ambiguous).collect())
    }
}

/// Middle value; the mean of the two middle values for even counts.
pub fn median(mut values: Vec<f64>) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        (values[m - 1] + values[m]) / 2.0
    }
}

/// Nearest class-mean frame classifier. Templates are averaged over every
/// frame of the training clips; each test clip contributes one frame.
pub fn nearest_template(data: &LoadedDataset, train: &[usize], test: &[usize], seed: u64) -> Result<MetricsReport> {
    let c = data.n_classes();
    let size = data.frames[*train.first().ok_or_else(|| Error::Data("no training clips".into()))?][0]
        .pixels()
        .len();
    let mut sums = vec![vec![0.0; size]; c];
    let mut counts = vec![0usize; c];
    for &clip in train {
        let label = data.index.clips[clip].label;
        for f in &data.frames[clip] {
            sums[label].iter_mut().zip(f.pixels()).for_each(|(s, v)| *s += v);
            counts[label] += 1;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    }
    let mut preds = Vec::with_capacity(test.len());
    for &clip in test {
        let pick = eval_frames(data, clip, 1, SamplingMode::Consecutive, seed)?[0];
        let px = data.frames[clip][pick].pixels();
        let dist = |t: &Vec<f64>| t.iter().zip(px).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let best = (0..c)
            .filter(|&k| counts[k] > 0)
            .min_by(|&a, &b| dist(&sums[a]).total_cmp(&dist(&sums[b])))
            .expect("at least one class has training clips");
        preds.push(best);
    }
    let labels: Vec<usize> = test.iter().map(|&i| data.index.clips[i].label).collect();
    MetricsReport::from_predictions(&preds, &labels, c)
}

/// Runs the configured fold once per seed. Training and fold assignment
/// both follow the seed; the dataset stays fixed.
pub fn run_experiment(cfg: &ExperimentConfig, data: &LoadedDataset) -> Result<ExperimentReport> {
    cfg.validate()?;
    let ambiguous = cfg.ambiguous_classes();
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let plan = patient_kfold(&data.index, cfg.folds, seed)?;
        plan.verify_partition(&data.index.patients())?;
        let reseed = |c: &TrainConfig| TrainConfig { seed, ..c.clone() };
        let heads: Vec<TrainConfig> = cfg.heads.iter().map(reseed).collect();
        let result = run_fold(&reseed(&cfg.classifier), &heads, data, &plan, cfg.fold)
            .map_err(|e| Error::Fold {
                fold: cfg.fold,
                source: Box::new(e),
            })?;
        let classifier_ambiguous = result.classifier.metrics.accuracy_within(&ambiguous).unwrap_or(f64::NAN);
        let oracle = nearest_template(data, &result.train, &result.test, seed)?;
        let outcome = SeedOutcome {
            seed,
            plan,
            classifier_ambiguous,
            oracle_ambiguous: oracle.accuracy_within(&ambiguous).unwrap_or(f64::NAN),
            classifier: result.classifier.metrics.clone(),
            heads: result.heads.iter().map(|t| (t.kind(), t.metrics.clone())).collect(),
        };
        log::info!(
            "seed {seed}: classifier F1 {:.2} (ambiguous accuracy {:.2}%), {}",
            outcome.classifier.f1,
            outcome.classifier_ambiguous,
            outcome
                .heads
                .iter()
                .map(|(k, m)| format!("{k:?} F1 {:.2}", m.f1))
                .collect::<Vec<_>>()
                .join(", ")
        );
        seeds.push(outcome);
    }
    Ok(ExperimentReport {
        ambiguous_classes: ambiguous,
        seeds,
    })
}
