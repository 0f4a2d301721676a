use serde::Serialize;

use super::config::TrainConfig;
use super::eval::evaluate;
use super::metrics::{CrossValReport, MetricsReport};
use super::trainer::{train, train_from, uses_feature_bank, EpochStats, FeatureBank};
use crate::data::{verify_patient_disjoint, LoadedDataset, Splitter};
use crate::error::{Error, Result};
use crate::models::{HeadKind, Model};
use crate::seeding::derive_seed;
use crate::tensor::ParamStore;

/// A trained model with its history and held-out scores.
#[derive(Clone, Debug)]
pub struct Trained {
    pub model: Model,
    pub store: ParamStore,
    pub history: Vec<EpochStats>,
    pub metrics: MetricsReport,
}

impl Trained {
    pub fn kind(&self) -> HeadKind {
        self.model.kind()
    }
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub classifier: Trained,
    /// One entry per requested head, in request order.
    pub heads: Vec<Trained>,
}

impl FoldResult {
    pub fn head(&self, kind: HeadKind) -> Option<&Trained> {
        self.heads.iter().find(|t| t.kind() == kind)
    }

    /// The last requested head, or the classifier when none were.
    pub fn primary(&self) -> &Trained {
        self.heads.last().unwrap_or(&self.classifier)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CrossValOutcome {
    pub report: CrossValReport,
    #[serde(skip)]
    pub folds: Vec<FoldResult>,
}

fn for_fold(cfg: &TrainConfig, fold: usize) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(cfg.seed, &[fold as u64]),
        ..cfg.clone()
    }
}

/// Trains the image classifier on one fold, then every head on top of its
/// backbone, and scores each on the held-out patients.
///
/// Fails with [`Error::Leakage`] if the splitter puts a patient on both sides.
pub fn run_fold(
    classifier: &TrainConfig,
    heads: &[TrainConfig],
    data: &LoadedDataset,
    splitter: &dyn Splitter,
    fold: usize,
) -> Result<FoldResult> {
    let (train_clips, test_clips) = splitter.split(&data.index, fold)?;
    verify_patient_disjoint(&data.index, fold, &train_clips, &test_clips)?;
    if test_clips.is_empty() {
        return Err(Error::Data(format!("fold {fold} has no test clips")));
    }

    let cfg = for_fold(classifier, fold);
    let base = train(&cfg, data, &train_clips)?;
    let metrics = evaluate(&base.model, &base.store.params, data, &test_clips, cfg.sampling, cfg.seed, None)?;
    let classifier = Trained {
        model: base.model,
        store: base.store,
        history: base.history,
        metrics,
    };

    let mut bank = None;
    let mut trained = Vec::with_capacity(heads.len());
    for head in heads {
        let cfg = for_fold(head, fold);
        let t = if cfg.model.head.kind == HeadKind::MeanVote {
            let mut store = ParamStore::new();
            let model = Model::build(&cfg.model, &mut store)?;
            store.copy_prefix_from(&classifier.store.params, "")?;
            let metrics = evaluate(&model, &store.params, data, &test_clips, cfg.sampling, cfg.seed, None)?;
            Trained {
                model,
                store,
                history: Vec::new(),
                metrics,
            }
        } else {
            let shared = if uses_feature_bank(&cfg) {
                if bank.is_none() {
                    let all: Vec<usize> = train_clips.iter().chain(&test_clips).copied().collect();
                    bank = Some(FeatureBank::build(&classifier.model, &classifier.store.params, data, &all)?);
                }
                bank.as_ref()
            } else {
                None
            };
            let out = train_from(&cfg, data, &train_clips, Some(&classifier.store.params), shared)?;
            let metrics = evaluate(&out.model, &out.store.params, data, &test_clips, cfg.sampling, cfg.seed, shared)?;
            Trained {
                model: out.model,
                store: out.store,
                history: out.history,
                metrics,
            }
        };
        log::info!("fold {fold} {:?}: accuracy {:.2}%, F1 {:.2}", t.kind(), t.metrics.accuracy, t.metrics.f1);
        trained.push(t);
    }
    Ok(FoldResult {
        fold,
        train: train_clips,
        test: test_clips,
        classifier,
        heads: trained,
    })
}

/// Runs every fold of `splitter`. The report scores the last head in
/// `heads`, or the classifier when `heads` is empty.
pub fn cross_validate(
    classifier: &TrainConfig,
    heads: &[TrainConfig],
    data: &LoadedDataset,
    splitter: &dyn Splitter,
) -> Result<CrossValOutcome> {
    let mut folds = Vec::with_capacity(splitter.folds());
    for fold in 0..splitter.folds() {
        let result = run_fold(classifier, heads, data, splitter, fold).map_err(|e| match e {
            leak @ Error::Leakage { .. } => leak,
            other => Error::Fold {
                fold,
                source: Box::new(other),
            },
        })?;
        folds.push(result);
    }
    let report = CrossValReport::new(folds.iter().map(|f| f.primary().metrics.clone()).collect())?;
    Ok(CrossValOutcome { report, folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{patient_kfold, ClipKFold};
    use crate::models::HeadSpec;
    use crate::train::trainer::tests::{halves, tiny_config};
    use crate::train::OptimizerKind;

    fn configs() -> (TrainConfig, Vec<TrainConfig>) {
        let classifier = tiny_config(HeadSpec::image(2, 0.2), 1);
        let mut gru = tiny_config(HeadSpec::gru_tfw(2, 8, 2, 0.2), 2);
        gru.optimizer = OptimizerKind::Adam;
        gru.max_lr = 0.01;
        gru.train_backbone = false;
        let vote = tiny_config(HeadSpec::mean_vote(2), 2);
        (classifier, vec![vote, gru])
    }

    #[test]
    fn two_folds_on_two_patients() {
        let data = halves(2, 2, 3, 7);
        let plan = patient_kfold(&data.index, 2, 0).unwrap();
        let (classifier, heads) = configs();
        let out = cross_validate(&classifier, &heads, &data, &plan).unwrap();
        assert_eq!(out.report.folds.len(), 2);
        let mean = (out.report.folds[0].f1 + out.report.folds[1].f1) / 2.0;
        assert!((out.report.mean.f1 - mean).abs() < 1e-12);

        let mut tested: Vec<usize> = out.folds.iter().flat_map(|f| f.test.clone()).collect();
        tested.sort_unstable();
        assert_eq!(tested, (0..data.index.clips.len()).collect::<Vec<_>>());
        for f in &out.folds {
            assert_eq!(f.heads.len(), 2);
            assert_eq!(f.primary().kind(), HeadKind::GruTfw);
            assert!(f.head(HeadKind::MeanVote).unwrap().history.is_empty());
        }
    }

    #[test]
    fn fixed_seed_reproduces_report() {
        let data = halves(3, 1, 3, 8);
        let plan = patient_kfold(&data.index, 3, 5).unwrap();
        let (classifier, heads) = configs();
        let a = cross_validate(&classifier, &heads, &data, &plan).unwrap();
        let b = cross_validate(&classifier, &heads, &data, &plan).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.report.to_csv(), b.report.to_csv());
    }

    #[test]
    fn clip_splitter_is_caught_as_leakage() {
        let data = halves(2, 3, 2, 9);
        let (classifier, _) = configs();
        let err = cross_validate(&classifier, &[], &data, &ClipKFold { k: 2, seed: 0 }).unwrap_err();
        assert!(matches!(err, Error::Leakage { fold: 0, .. }), "{err}");
    }

    #[test]
    fn training_errors_carry_the_fold() {
        let data = halves(2, 1, 1, 10);
        let plan = patient_kfold(&data.index, 2, 0).unwrap();
        let (classifier, _) = configs();
        // GRU on two frames cannot be fed from one-frame clips
        let mut gru = tiny_config(HeadSpec::gru(2, 4, 0.0), 2);
        gru.optimizer = OptimizerKind::Adam;
        gru.train_backbone = false;
        let err = cross_validate(&classifier, &[gru], &data, &plan).unwrap_err();
        assert!(matches!(err, Error::Fold { fold: 0, .. }), "{err}");
    }
}
