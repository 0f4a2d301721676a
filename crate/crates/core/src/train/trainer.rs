use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{OptimizerKind, TrainConfig};
use crate::data::{augment_sequence, sample_frames, FrameSequence, LoadedDataset};
use crate::error::{Error, Result};
use crate::models::{HeadKind, Model, BACKBONE_PREFIX};
use crate::seeding::rng_for;
use crate::tensor::{
    adam_step, sgd_momentum_step, softmax_cross_entropy, softmax_cross_entropy_backward, AdamConfig, Gradients,
    ParamId, ParamStore, Params, SgdConfig, Tensor,
};

const INIT: u64 = 0x1417;
const SHUFFLE: u64 = 0x5AFF;
const SAMPLE: u64 = 0x5A3E;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    /// Training-mode accuracy in percent.
    pub accuracy: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub store: ParamStore,
    pub history: Vec<EpochStats>,
}

/// Backbone features of every frame of selected clips, computed once with
/// frozen parameters.
#[derive(Clone, Debug, Default)]
pub struct FeatureBank {
    feats: Vec<Option<Vec<Tensor>>>,
}

impl FeatureBank {
    pub fn build(model: &Model, params: &Params, data: &LoadedDataset, clips: &[usize]) -> Result<Self> {
        let computed = clips
            .par_iter()
            .map(|&c| {
                data.frames[c]
                    .iter()
                    .map(|f| Ok(model.features(params, &f.to_tensor())?.0))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut feats = vec![None; data.frames.len()];
        for (&c, f) in clips.iter().zip(computed) {
            feats[c] = Some(f);
        }
        Ok(Self { feats })
    }

    pub fn contains(&self, clip: usize) -> bool {
        self.feats.get(clip).is_some_and(Option::is_some)
    }

    pub fn frames(&self, clip: usize, indices: &[usize]) -> Result<Vec<Tensor>> {
        let all = self
            .feats
            .get(clip)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::State(format!("clip {clip} is not in the feature bank")))?;
        Ok(indices.iter().map(|&i| all[i].clone()).collect())
    }
}

/// Whether a configuration trains on fixed backbone features.
pub fn uses_feature_bank(config: &TrainConfig) -> bool {
    !config.train_backbone && config.augment == Default::default()
}

struct SampleResult {
    grads: Gradients,
    loss: f64,
    correct: bool,
}

fn run_sample(
    config: &TrainConfig,
    model: &Model,
    params: &Params,
    data: &LoadedDataset,
    bank: Option<&FeatureBank>,
    epoch: usize,
    clip: usize,
) -> Result<SampleResult> {
    let mut rng = rng_for(config.seed, &[SAMPLE, epoch as u64, clip as u64]);
    let record = &data.index.clips[clip];
    let n = model.spec.frames_per_sample();
    let picks = sample_frames(config.sampling, &record.clip_id, data.frames[clip].len(), n, Some(&mut rng))?;
    let mut grads = Gradients::zeros_like(params);

    let (out, loss) = match bank {
        Some(bank) => {
            let feats = bank.frames(clip, &picks)?;
            let (out, cache) = model.head_forward(params, &feats, Some(&mut rng))?;
            let (loss, _) = softmax_cross_entropy(&out.logits, record.label)?;
            let dl = softmax_cross_entropy_backward(&out.probs, record.label, 1.0);
            model.head_backward(params, &mut grads, &cache, &dl)?;
            (out, loss)
        }
        None => {
            let mut frames: Vec<_> = picks.iter().map(|&i| data.frames[clip][i].clone()).collect();
            if config.augment != Default::default() {
                let seq = FrameSequence::new(frames, &record.patient_id, &record.clip_id, record.label, config.sampling)?;
                frames = augment_sequence(&seq, &config.augment, &mut rng).frames;
            }
            let tensors: Vec<Tensor> = frames.iter().map(|f| f.to_tensor()).collect();
            let (out, cache) = model.forward(params, &tensors, Some(&mut rng))?;
            let (loss, _) = softmax_cross_entropy(&out.logits, record.label)?;
            let dl = softmax_cross_entropy_backward(&out.probs, record.label, 1.0);
            model.backward(params, &mut grads, &cache, &dl, config.train_backbone)?;
            (out, loss)
        }
    };
    Ok(SampleResult {
        grads,
        loss,
        correct: out.probs.argmax() == record.label,
    })
}

/// Trains from a fresh initialization.
pub fn train(config: &TrainConfig, data: &LoadedDataset, clips: &[usize]) -> Result<TrainOutcome> {
    train_from(config, data, clips, None, None)
}

/// Trains `config.model` on `clips`. Backbone weights are copied from
/// `backbone` when given. A frozen backbone without augmentation trains on
/// precomputed features, taken from `bank` or computed here.
pub fn train_from(
    config: &TrainConfig,
    data: &LoadedDataset,
    clips: &[usize],
    backbone: Option<&Params>,
    bank: Option<&FeatureBank>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if config.model.head.kind == HeadKind::MeanVote {
        return Err(Error::Config("mean voting reuses the image classifier and is not trained".into()));
    }
    if clips.is_empty() {
        return Err(Error::Data("no training clips".into()));
    }
    if config.model.head.n_classes != data.n_classes() {
        return Err(Error::Config(format!(
            "model has {} classes but the dataset has {}",
            config.model.head.n_classes,
            data.n_classes()
        )));
    }
    let (model, mut store) = Model::init(&config.model, &mut rng_for(config.seed, &[INIT]))?;
    if let Some(source) = backbone {
        store.copy_prefix_from(source, BACKBONE_PREFIX)?;
    }

    let owned_bank;
    let bank = if uses_feature_bank(config) {
        match bank {
            Some(b) => Some(b),
            None => {
                owned_bank = FeatureBank::build(&model, &store.params, data, clips)?;
                Some(&owned_bank)
            }
        }
    } else if bank.is_some() {
        return Err(Error::Config(
            "precomputed features require a frozen backbone and no augmentation".into(),
        ));
    } else {
        None
    };

    let frozen_ids: Vec<ParamId> = if config.train_backbone {
        Vec::new()
    } else {
        store.params.ids().filter(|&id| store.params.name(id).starts_with(BACKBONE_PREFIX)).collect()
    };
    let steps_per_epoch = clips.len().div_ceil(config.batch_size);
    let schedule = config.schedule(steps_per_epoch);
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let mut order = clips.to_vec();
        order.shuffle(&mut rng_for(config.seed, &[SHUFFLE, epoch as u64]));
        let (mut loss_sum, mut correct, mut lr) = (0.0, 0usize, schedule.lr_at(step));
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let params = &store.params;
            let results = batch
                .par_iter()
                .map(|&clip| run_sample(config, &model, params, data, bank, epoch, clip))
                .collect::<Result<Vec<_>>>()?;
            lr = schedule.lr_at(step);
            store.zero_grads();
            let mut batch_loss = 0.0;
            for r in &results {
                store.grads.accumulate(&r.grads);
                batch_loss += r.loss;
                correct += usize::from(r.correct);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                    lr,
                });
            }
            loss_sum += batch_loss;
            store.grads.scale(1.0 / batch.len() as f64);
            let frozen: Vec<Tensor> = frozen_ids.iter().map(|&id| store.params.get(id).clone()).collect();
            match config.optimizer {
                OptimizerKind::SgdMomentum => sgd_momentum_step(
                    &mut store,
                    SgdConfig {
                        lr,
                        momentum: config.momentum,
                        l2: config.l2,
                    },
                ),
                OptimizerKind::Adam => adam_step(&mut store, AdamConfig::new(lr, config.momentum, config.l2)),
            }
            for (&id, value) in frozen_ids.iter().zip(frozen) {
                *store.params.get_mut(id) = value;
            }
            step += 1;
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / clips.len() as f64,
            accuracy: 100.0 * correct as f64 / clips.len() as f64,
            lr,
        };
        log::info!(
            "{:?} epoch {epoch}: loss {:.4}, train accuracy {:.2}%, lr {:.2e}",
            config.model.head.kind,
            stats.loss,
            stats.accuracy,
            stats.lr
        );
        history.push(stats);
    }
    Ok(TrainOutcome { model, store, history })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::{Frame, LabelSet};
    use crate::models::{BackboneSpec, HeadSpec, ModelSpec, StageSpec};
    use crate::tensor::ScheduleKind;
    use rand::Rng;

    pub(crate) fn tiny_spec(head: HeadSpec, n_frames: usize) -> ModelSpec {
        ModelSpec {
            backbone: BackboneSpec {
                input_size: 8,
                stem_channels: 4,
                stages: vec![StageSpec {
                    channels: 4,
                    blocks: 1,
                    downsample: false,
                }],
                feature_dim: Some(8),
            },
            head,
            n_frames,
        }
    }

    /// Two classes lit on opposite halves of an 8×8 frame, with noise.
    pub(crate) fn halves(patients: usize, clips: usize, frames: usize, seed: u64) -> LoadedDataset {
        let labels = LabelSet::custom(vec!["left".into(), "right".into()]).unwrap();
        let mut rng = rng_for(seed, &[1]);
        let mut out = Vec::new();
        for p in 0..patients {
            for label in 0..2 {
                for c in 0..clips {
                    let fs = (0..frames)
                        .map(|_| {
                            let px = (0..64)
                                .map(|i| {
                                    let lit = (i % 8 < 4) == (label == 0);
                                    let base = if lit { 0.8 } else { 0.2 };
                                    (base + rng.random_range(-0.1..0.1f64)).clamp(0.0, 1.0)
                                })
                                .collect();
                            Frame::new(8, 8, px).unwrap()
                        })
                        .collect();
                    out.push((format!("P{p:03}"), format!("c{label:02}_{c:02}"), label, fs));
                }
            }
        }
        LoadedDataset::from_memory(labels, out).unwrap()
    }

    pub(crate) fn tiny_config(head: HeadSpec, n_frames: usize) -> TrainConfig {
        let mut cfg = TrainConfig::classifier(2);
        cfg.model = tiny_spec(head, n_frames);
        cfg.batch_size = 4;
        cfg.epochs = 3;
        cfg.max_lr = 0.05;
        cfg
    }

    fn all(data: &LoadedDataset) -> Vec<usize> {
        (0..data.index.clips.len()).collect()
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let data = halves(2, 2, 3, 0);
        let mut cfg = tiny_config(HeadSpec::image(2, 0.5), 1);
        cfg.epochs = 1;
        cfg.max_lr = 0.0;
        let out = train(&cfg, &data, &all(&data)).unwrap();
        let (_, fresh) = Model::init(&cfg.model, &mut rng_for(cfg.seed, &[INIT])).unwrap();
        assert_eq!(out.history.len(), 1);
        for id in fresh.params.ids() {
            assert_eq!(fresh.params.get(id), out.store.params.get(id), "{}", fresh.params.name(id));
        }
    }

    #[test]
    fn separable_toy_reaches_full_train_accuracy() {
        let data = halves(3, 3, 2, 1);
        let mut cfg = tiny_config(HeadSpec::image(2, 0.0), 1);
        cfg.epochs = 50;
        let out = train(&cfg, &data, &all(&data)).unwrap();
        let best = out.history.iter().map(|h| h.accuracy).fold(0.0, f64::max);
        assert_eq!(best, 100.0, "{:?}", out.history.last());
        assert!(out.history.last().unwrap().loss < out.history[0].loss);
    }

    #[test]
    fn fixed_seed_is_bitwise_reproducible() {
        let data = halves(2, 2, 4, 2);
        let cfg = tiny_config(HeadSpec::gru(2, 6, 0.3), 3);
        let mut cfg = TrainConfig {
            optimizer: OptimizerKind::Adam,
            max_lr: 0.01,
            ..cfg
        };
        cfg.train_backbone = true;
        let a = train(&cfg, &data, &all(&data)).unwrap();
        let b = train(&cfg, &data, &all(&data)).unwrap();
        for id in a.store.params.ids() {
            let (x, y) = (a.store.params.get(id).data(), b.store.params.get(id).data());
            assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn frozen_backbone_is_untouched_and_bank_matches_direct_path() {
        let data = halves(2, 2, 4, 3);
        let mut cfg = tiny_config(HeadSpec::gru_tfw(2, 8, 2, 0.3), 2);
        cfg.optimizer = OptimizerKind::Adam;
        cfg.max_lr = 0.01;
        cfg.l2 = 1e-2;
        cfg.train_backbone = false;
        let (_, source) = Model::init(&cfg.model, &mut rng_for(99, &[0])).unwrap();
        let clips = all(&data);
        let banked = train_from(&cfg, &data, &clips, Some(&source.params), None).unwrap();
        for id in source.params.ids().filter(|&id| source.params.name(id).starts_with(BACKBONE_PREFIX)) {
            assert_eq!(source.params.get(id), banked.store.params.by_name(source.params.name(id)).unwrap());
        }

        let bank = FeatureBank::build(&banked.model, &source.params, &data, &clips).unwrap();
        let again = train_from(&cfg, &data, &clips, Some(&source.params), Some(&bank)).unwrap();
        assert_eq!(again.history, banked.history);
    }

    #[test]
    fn first_epoch_loss_is_near_uniform_baseline() {
        let data = halves(4, 4, 1, 4);
        let mut cfg = tiny_config(HeadSpec::image(2, 0.0), 1);
        cfg.epochs = 1;
        cfg.max_lr = 1e-3;
        let out = train(&cfg, &data, &all(&data)).unwrap();
        let ln_c = 2f64.ln();
        assert!((out.history[0].loss - ln_c).abs() < 0.05 * ln_c, "{}", out.history[0].loss);
    }

    #[test]
    fn non_finite_loss_reports_batch_and_lr() {
        let mut data = halves(2, 2, 1, 5);
        data.frames[3][0].pixels_mut()[0] = f64::NAN;
        let mut cfg = tiny_config(HeadSpec::image(2, 0.0), 1);
        cfg.schedule = ScheduleKind::Constant;
        cfg.batch_size = 2;
        match train(&cfg, &data, &all(&data)) {
            Err(Error::NonFiniteLoss { epoch: 0, lr, .. }) => assert_eq!(lr, cfg.max_lr),
            other => panic!("expected a non-finite loss, got {:?}", other.map(|o| o.history)),
        }
    }

    #[test]
    fn mean_vote_is_not_trainable() {
        let data = halves(1, 1, 2, 6);
        let cfg = tiny_config(HeadSpec::mean_vote(2), 2);
        assert!(matches!(train(&cfg, &data, &all(&data)), Err(Error::Config(_))));
    }
}
