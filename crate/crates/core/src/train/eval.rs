use rayon::prelude::*;

use super::metrics::MetricsReport;
use super::trainer::FeatureBank;
use crate::data::{sample_frames, LoadedDataset, SamplingMode};
use crate::error::Result;
use crate::models::Model;
use crate::seeding::rng_for;
use crate::tensor::{Params, Tensor};

const EVAL: u64 = 0xE7A1;

/// Frame indices evaluated for one clip. Consecutive windows start at a
/// position fixed by `seed` and the clip number.
pub fn eval_frames(data: &LoadedDataset, clip: usize, n: usize, sampling: SamplingMode, seed: u64) -> Result<Vec<usize>> {
    let mut rng = rng_for(seed, &[EVAL, clip as u64]);
    sample_frames(sampling, &data.index.clips[clip].clip_id, data.frames[clip].len(), n, Some(&mut rng))
}

/// Evaluation-mode class probabilities, one row per clip.
pub fn predict_clips(
    model: &Model,
    params: &Params,
    data: &LoadedDataset,
    clips: &[usize],
    sampling: SamplingMode,
    seed: u64,
    bank: Option<&FeatureBank>,
) -> Result<Vec<Tensor>> {
    let n = model.spec.frames_per_sample();
    clips
        .par_iter()
        .map(|&clip| {
            let picks = eval_frames(data, clip, n, sampling, seed)?;
            match bank.filter(|b| b.contains(clip)) {
                Some(bank) => model.predict_features(params, &bank.frames(clip, &picks)?),
                None => {
                    let frames: Vec<Tensor> = picks.iter().map(|&i| data.frames[clip][i].to_tensor()).collect();
                    model.predict(params, &frames)
                }
            }
        })
        .collect()
}

/// One prediction per clip, scored against the clip labels.
pub fn evaluate(
    model: &Model,
    params: &Params,
    data: &LoadedDataset,
    clips: &[usize],
    sampling: SamplingMode,
    seed: u64,
    bank: Option<&FeatureBank>,
) -> Result<MetricsReport> {
    let probs = predict_clips(model, params, data, clips, sampling, seed, bank)?;
    let predicted: Vec<usize> = probs.iter().map(Tensor::argmax).collect();
    let truth: Vec<usize> = clips.iter().map(|&c| data.index.clips[c].label).collect();
    MetricsReport::from_predictions(&predicted, &truth, data.n_classes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::HeadSpec;
    use crate::train::trainer::tests::{halves, tiny_config};
    use crate::train::trainer::train;

    #[test]
    fn one_prediction_per_clip_and_deterministic() {
        let data = halves(2, 2, 5, 11);
        let cfg = tiny_config(HeadSpec::image(2, 0.5), 1);
        let clips: Vec<usize> = (0..data.index.clips.len()).collect();
        let out = train(&cfg, &data, &clips).unwrap();
        let a = evaluate(&out.model, &out.store.params, &data, &clips, cfg.sampling, 3, None).unwrap();
        let b = evaluate(&out.model, &out.store.params, &data, &clips, cfg.sampling, 3, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_samples, clips.len());
        assert_eq!(a.accuracy, a.recall);
    }

    #[test]
    fn bank_and_frames_agree() {
        let data = halves(1, 2, 6, 12);
        let cfg = tiny_config(HeadSpec::gru_tfw(2, 8, 4, 0.0), 4);
        let (model, store) = Model::init(&cfg.model, &mut rng_for(0, &[])).unwrap();
        let clips: Vec<usize> = (0..data.index.clips.len()).collect();
        let bank = FeatureBank::build(&model, &store.params, &data, &clips).unwrap();
        let direct = predict_clips(&model, &store.params, &data, &clips, SamplingMode::Consecutive, 1, None).unwrap();
        let banked = predict_clips(&model, &store.params, &data, &clips, SamplingMode::Consecutive, 1, Some(&bank)).unwrap();
        for (a, b) in direct.iter().zip(&banked) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn empty_clip_list_is_an_error() {
        let data = halves(1, 1, 1, 13);
        let cfg = tiny_config(HeadSpec::image(2, 0.0), 1);
        let (model, store) = Model::init(&cfg.model, &mut rng_for(0, &[])).unwrap();
        assert!(evaluate(&model, &store.params, &data, &[], cfg.sampling, 0, None).is_err());
    }
}
