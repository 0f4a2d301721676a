//! Finite-difference checks of every layer over many random draws.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    grad_check, grad_check_layer, softmax_cross_entropy, softmax_cross_entropy_backward, Conv2d, Dense, Dropout,
    GlobalAvgPool, GradCheckEntry, GradCheckReport, Gradients, GruCell, MultiHeadAttention, ParamStore, Relu,
    Tensor, GRAD_CHECK_EPS,
};
use crate::error::{Error, Result};
use crate::seeding::rng_for;

pub const SUITE_LAYERS: [&str; 8] = ["dense", "conv", "relu", "pool", "dropout", "gru", "softmax_ce", "attention"];

#[derive(Clone, Debug, Serialize)]
pub struct LayerSuiteResult {
    pub layer: &'static str,
    pub seeds: usize,
    pub max_rel_err: f64,
    #[serde(skip)]
    pub worst: Option<GradCheckEntry>,
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("non-empty shape")
}

fn randomize(store: &mut ParamStore, bound: f64, rng: &mut ChaCha8Rng) {
    for id in store.params.ids().collect::<Vec<_>>() {
        for v in store.params.get_mut(id).data_mut() {
            *v = rng.random_range(-bound..bound);
        }
    }
}

/// Values bounded away from zero so no finite-difference probe crosses a kink.
fn off_kink(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = uniform(shape, 0.05, 1.0, rng);
    for v in t.data_mut() {
        if rng.random::<bool>() {
            *v = -*v;
        }
    }
    t
}

/// One check of `layer` with sizes and values drawn from `seed`.
pub fn check_layer(layer: &str, seed: u64) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed, &[0x6C5]);
    let mut store = ParamStore::new();
    let eps = GRAD_CHECK_EPS;
    match layer {
        "dense" => {
            let (i, o) = (rng.random_range(1..8), rng.random_range(1..8));
            let l = Dense::register(&mut store, "fc", i, o);
            randomize(&mut store, 1.0, &mut rng);
            let x = uniform(&[i], -1.0, 1.0, &mut rng);
            let r = uniform(&[o], -1.0, 1.0, &mut rng);
            grad_check_layer(&l, &mut store, x, &r, eps)
        }
        "conv" => {
            let (ci, co) = (rng.random_range(1..4), rng.random_range(1..4));
            let (size, stride, pad, n) = match rng.random_range(0..3) {
                0 => (3, 1, 1, rng.random_range(3..7)),
                1 => (4, 2, 1, 2 * rng.random_range(2..4)),
                _ => (2, 2, 0, 2 * rng.random_range(1..4)),
            };
            let l = Conv2d::register(&mut store, "c", ci, co, size, stride, pad);
            randomize(&mut store, 1.0, &mut rng);
            let x = uniform(&[ci, n, n], -1.0, 1.0, &mut rng);
            let shape = l.out_shape(x.shape())?;
            let r = uniform(&shape, -1.0, 1.0, &mut rng);
            grad_check_layer(&l, &mut store, x, &r, eps)
        }
        "relu" => {
            let n = rng.random_range(1..16);
            let x = off_kink(&[n], &mut rng);
            let r = uniform(&[n], -1.0, 1.0, &mut rng);
            grad_check_layer(&Relu, &mut store, x, &r, eps)
        }
        "pool" => {
            let (c, h, w) = (rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..5));
            let x = uniform(&[c, h, w], -1.0, 1.0, &mut rng);
            let r = uniform(&[c], -1.0, 1.0, &mut rng);
            grad_check_layer(&GlobalAvgPool, &mut store, x, &r, eps)
        }
        "dropout" => {
            let n = rng.random_range(1..16);
            let r = uniform(&[n], -1.0, 1.0, &mut rng);
            let x = uniform(&[n], -1.0, 1.0, &mut rng);
            let mut report = grad_check_layer(&Dropout::eval(), &mut store, x.clone(), &r, eps)?;
            // a frozen training mask is linear as well
            let masked = Dropout::sample(0.5, n, &mut rng);
            report.entries.extend(grad_check_layer(&masked, &mut store, x, &r, eps)?.entries);
            Ok(report)
        }
        "gru" => {
            let (d, h) = (rng.random_range(1..6), rng.random_range(1..6));
            let cell = GruCell::register(&mut store, "g", d, h);
            randomize(&mut store, 1.0, &mut rng);
            let r = uniform(&[h], -1.0, 1.0, &mut rng);
            let mut inputs = [uniform(&[d], -1.0, 1.0, &mut rng), uniform(&[h], -1.0, 1.0, &mut rng)];
            grad_check(
                &mut store,
                &mut inputs,
                |p, xs| Ok(cell.forward(p, &xs[0], &xs[1])?.0.dot(&r)),
                |p, xs| {
                    let mut g = Gradients::zeros_like(p);
                    let (_, cache) = cell.forward(p, &xs[0], &xs[1])?;
                    let (gx, gh) = cell.backward(p, &mut g, &cache, &r)?;
                    Ok((g, vec![gx, gh]))
                },
                eps,
            )
        }
        "softmax_ce" => {
            let c = rng.random_range(2..10);
            let label = rng.random_range(0..c);
            let mut inputs = [uniform(&[c], -3.0, 3.0, &mut rng)];
            grad_check(
                &mut store,
                &mut inputs,
                |_, xs| Ok(softmax_cross_entropy(&xs[0], label)?.0),
                |p, xs| {
                    let (_, probs) = softmax_cross_entropy(&xs[0], label)?;
                    Ok((Gradients::zeros_like(p), vec![softmax_cross_entropy_backward(&probs, label, 1.0)]))
                },
                eps,
            )
        }
        "attention" => {
            let heads = rng.random_range(1..3);
            let dim = heads * rng.random_range(2..4);
            let tokens = rng.random_range(2..5);
            let l = MultiHeadAttention::register(&mut store, "attn", tokens, dim, heads)?;
            randomize(&mut store, 1.0, &mut rng);
            let x = uniform(&[tokens, dim], -2.0, 2.0, &mut rng);
            let r = uniform(&[tokens, dim], -1.0, 1.0, &mut rng);
            grad_check_layer(&l, &mut store, x, &r, eps)
        }
        other => Err(Error::Config(format!(
            "unknown layer {other:?}; expected one of {}",
            SUITE_LAYERS.join(", ")
        ))),
    }
}

/// Runs `check_layer` for every layer over seeds `0..seeds`.
pub fn gradient_suite(seeds: usize) -> Result<Vec<LayerSuiteResult>> {
    SUITE_LAYERS
        .iter()
        .map(|&layer| {
            let mut result = LayerSuiteResult {
                layer,
                seeds,
                max_rel_err: 0.0,
                worst: None,
            };
            for seed in 0..seeds as u64 {
                let report = check_layer(layer, seed)?;
                if report.max_rel_err() >= result.max_rel_err {
                    result.max_rel_err = report.max_rel_err();
                    result.worst = report.worst().cloned();
                }
            }
            Ok(result)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_passes_on_a_few_seeds() {
        for r in gradient_suite(3).unwrap() {
            assert!(r.max_rel_err < 1e-4, "{}: {:?}", r.layer, r.worst);
        }
    }

    #[test]
    fn unknown_layer_is_rejected() {
        assert!(matches!(check_layer("lstm", 0), Err(Error::Config(_))));
    }
}
