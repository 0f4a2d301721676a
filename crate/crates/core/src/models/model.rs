use rand::Rng;

use super::backbone::{Backbone, BackboneCache};
use super::spec::{HeadKind, ModelSpec};
use super::vote::mean_vote;
use super::weave::{unweave, weave, FeatureMatrix, WeavedMatrix};
use crate::error::{Error, Result};
use crate::tensor::{
    softmax, AttentionCache, Dense, DenseCache, Dropout, DropoutCache, GruCache, GruCell, Init, Layer, MultiHeadAttention,
    Gradients, ParamStore, Params, Relu, ReluCache, Tensor,
};

pub const HEAD_PREFIX: &str = "head.";

/// Small output weights keep the untrained softmax close to uniform.
const OUTPUT_INIT: Init = Init::Normal { std: 0.05 };

#[derive(Clone, Debug)]
enum Head {
    Image { fc: Dense },
    Gru { cell: GruCell, fc: Dense },
    Attention { attn: MultiHeadAttention, fc1: Dense, fc2: Dense },
}

/// Result of a head forward pass.
#[derive(Clone, Debug)]
pub struct HeadOutput {
    pub logits: Tensor,
    pub probs: Tensor,
    /// Class probabilities after every recurrent step (recurrent heads only),
    /// computed without dropout.
    pub step_probs: Vec<Tensor>,
}

#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug)]
pub enum HeadCache {
    Image {
        drop: Dropout,
        fc: DenseCache,
    },
    Gru {
        steps: Vec<GruCache>,
        drop: Dropout,
        fc: DenseCache,
    },
    Attention {
        attn: AttentionCache,
        fc1: DenseCache,
        relu: ReluCache,
        drop: Dropout,
        fc2: DenseCache,
    },
}

#[derive(Clone, Debug)]
pub struct ModelCache {
    pub backbone: Vec<BackboneCache>,
    pub head: HeadCache,
}

/// A backbone plus one classification head, with parameters held in a
/// separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub backbone: Backbone,
    head: Head,
}

/// Unrolls `cell` from a zero state over `rows`. Returns the per-step
/// hidden states and caches.
pub fn gru_unroll(cell: &GruCell, params: &Params, rows: &[Tensor]) -> Result<(Vec<Tensor>, Vec<GruCache>)> {
    if rows.is_empty() {
        return Err(Error::Dimension("recurrent head received an empty sequence".into()));
    }
    let mut h = Tensor::zeros(&[cell.hidden_dim]);
    let mut states = Vec::with_capacity(rows.len());
    let mut caches = Vec::with_capacity(rows.len());
    for x in rows {
        let (next, cache) = cell.forward(params, x, &h)?;
        states.push(next.clone());
        caches.push(cache);
        h = next;
    }
    Ok((states, caches))
}

/// Evaluation-mode GRU classifier over a row sequence: the shared dense
/// head is applied at every step. Returns `(per-step probabilities, final
/// probabilities)`.
pub fn gru_sequence_forward(cell: &GruCell, fc: &Dense, params: &Params, rows: &[Tensor]) -> Result<(Vec<Tensor>, Tensor)> {
    let (states, _) = gru_unroll(cell, params, rows)?;
    let steps = states
        .iter()
        .map(|h| Ok(softmax(&fc.forward(params, h)?.0)))
        .collect::<Result<Vec<_>>>()?;
    let last = steps.last().cloned().expect("non-empty sequence");
    Ok((steps, last))
}

impl Model {
    /// Registers all parameters in `store`. Backbone parameters are named
    /// `backbone.*` and head parameters `head.*`.
    pub fn build(spec: &ModelSpec, store: &mut ParamStore) -> Result<Self> {
        spec.validate()?;
        let backbone = Backbone::register(store, &spec.backbone)?;
        let d = spec.feature_dim();
        let h = &spec.head;
        let c = h.n_classes;
        let p = HEAD_PREFIX;
        let head = match h.kind {
            HeadKind::Image | HeadKind::MeanVote => Head::Image {
                fc: Dense::register_with(store, &format!("{p}fc"), d, c, OUTPUT_INIT),
            },
            HeadKind::Gru | HeadKind::GruTfw => {
                let hidden = h.hidden.expect("validated");
                let input = spec.gru_input_dim().expect("validated");
                Head::Gru {
                    cell: GruCell::register(store, &format!("{p}gru"), input, hidden),
                    fc: Dense::register_with(store, &format!("{p}fc"), hidden, c, OUTPUT_INIT),
                }
            }
            HeadKind::Attention => {
                let t = h.token_dim.expect("validated");
                let fc_dim = h.fc_dim.expect("validated");
                let tokens = spec.tokens().expect("validated");
                Head::Attention {
                    attn: MultiHeadAttention::register(store, &format!("{p}attn"), tokens, t, h.n_heads.expect("validated"))?,
                    fc1: Dense::register(store, &format!("{p}fc1"), t, fc_dim),
                    fc2: Dense::register_with(store, &format!("{p}fc2"), fc_dim, c, OUTPUT_INIT),
                }
            }
        };
        Ok(Self {
            spec: spec.clone(),
            backbone,
            head,
        })
    }

    /// Builds the model in a fresh store and initializes it from `rng`.
    pub fn init<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let model = Self::build(spec, &mut store)?;
        store.params.initialize(rng);
        Ok((model, store))
    }

    pub fn kind(&self) -> HeadKind {
        self.spec.head.kind
    }

    pub fn n_classes(&self) -> usize {
        self.spec.head.n_classes
    }

    pub fn features(&self, params: &Params, frame: &Tensor) -> Result<(Tensor, BackboneCache)> {
        self.backbone.forward(params, frame)
    }

    /// Rows fed to the recurrent head: weaved rows for TFW (in the
    /// configured order), the feature vectors themselves otherwise.
    pub fn sequence_rows(&self, feats: &[Tensor]) -> Result<Vec<Tensor>> {
        if self.kind() != HeadKind::GruTfw {
            return Ok(feats.to_vec());
        }
        let k = self.spec.head.weave_k.expect("validated");
        let rows = weave(&FeatureMatrix::from_rows(feats)?, k)?.rows();
        Ok(match &self.spec.head.weave_order {
            Some(order) => order.iter().map(|&i| rows[i].clone()).collect(),
            None => rows,
        })
    }

    fn rows_grad_to_features(&self, grad_rows: Vec<Tensor>, n: usize) -> Result<Vec<Tensor>> {
        if self.kind() != HeadKind::GruTfw {
            return Ok(grad_rows);
        }
        let d = self.spec.feature_dim();
        let k = self.spec.head.weave_k.expect("validated");
        let natural = match &self.spec.head.weave_order {
            Some(order) => {
                let mut out = vec![Tensor::zeros(&[1]); k];
                for (g, &i) in grad_rows.into_iter().zip(order) {
                    out[i] = g;
                }
                out
            }
            None => grad_rows,
        };
        Ok(unweave(&WeavedMatrix::from_rows(&natural, n, d)?, n, d, k)?.rows())
    }

    fn check_feats(&self, feats: &[Tensor]) -> Result<()> {
        let want = self.spec.frames_per_sample();
        let d = self.spec.feature_dim();
        if feats.len() != want || feats.iter().any(|f| f.shape() != [d]) {
            return Err(Error::Dimension(format!(
                "{:?} head expects {want} feature vectors of length {d}, got {} of shapes {:?}",
                self.kind(),
                feats.len(),
                feats.iter().map(|f| f.shape().to_vec()).collect::<Vec<_>>()
            )));
        }
        Ok(())
    }

    /// Head forward from per-frame features. Dropout is active only when
    /// `rng` is given.
    pub fn head_forward<R: Rng + ?Sized>(
        &self,
        params: &Params,
        feats: &[Tensor],
        rng: Option<&mut R>,
    ) -> Result<(HeadOutput, HeadCache)> {
        if self.kind() == HeadKind::MeanVote {
            return Err(Error::State(
                "mean voting has no trainable head of its own; train the image classifier".into(),
            ));
        }
        self.check_feats(feats)?;
        let p = self.spec.head.dropout;
        match &self.head {
            Head::Image { fc } => {
                let drop = Dropout::for_mode(p, feats[0].len(), rng);
                let (x, _) = drop.forward(params, &feats[0])?;
                let (logits, fc_cache) = fc.forward(params, &x)?;
                let out = HeadOutput {
                    probs: softmax(&logits),
                    logits,
                    step_probs: Vec::new(),
                };
                Ok((out, HeadCache::Image { drop, fc: fc_cache }))
            }
            Head::Gru { cell, fc } => {
                let rows = self.sequence_rows(feats)?;
                let (states, steps) = gru_unroll(cell, params, &rows)?;
                let step_probs = states
                    .iter()
                    .map(|h| Ok(softmax(&fc.forward(params, h)?.0)))
                    .collect::<Result<Vec<_>>>()?;
                let last = states.last().expect("non-empty");
                let drop = Dropout::for_mode(p, last.len(), rng);
                let (x, _) = drop.forward(params, last)?;
                let (logits, fc_cache) = fc.forward(params, &x)?;
                let out = HeadOutput {
                    probs: softmax(&logits),
                    logits,
                    step_probs,
                };
                Ok((out, HeadCache::Gru { steps, drop, fc: fc_cache }))
            }
            Head::Attention { attn, fc1, fc2 } => {
                let flat: Vec<f64> = feats.iter().flat_map(|f| f.data().iter().copied()).collect();
                let tokens = Tensor::new(&[attn.tokens, attn.dim], flat)?;
                let (mixed, attn_cache) = attn.forward(params, &tokens)?;
                let pooled = mean_rows(&mixed, attn.tokens, attn.dim);
                let (a, fc1_cache) = fc1.forward(params, &pooled)?;
                let (a, relu) = Relu.forward(params, &a)?;
                let drop = Dropout::for_mode(p, a.len(), rng);
                let (a, _) = drop.forward(params, &a)?;
                let (logits, fc2_cache) = fc2.forward(params, &a)?;
                let out = HeadOutput {
                    probs: softmax(&logits),
                    logits,
                    step_probs: Vec::new(),
                };
                let cache = HeadCache::Attention {
                    attn: attn_cache,
                    fc1: fc1_cache,
                    relu,
                    drop,
                    fc2: fc2_cache,
                };
                Ok((out, cache))
            }
        }
    }

    /// Backpropagates `grad_logits` through the head, accumulating into
    /// `grads`, and returns the gradient for each input feature vector.
    pub fn head_backward(
        &self,
        params: &Params,
        grads: &mut Gradients,
        cache: &HeadCache,
        grad_logits: &Tensor,
    ) -> Result<Vec<Tensor>> {
        match (&self.head, cache) {
            (Head::Image { fc }, HeadCache::Image { drop, fc: fc_cache }) => {
                let g = fc.backward(params, grads, fc_cache, grad_logits)?;
                Ok(vec![drop.backward(params, grads, &DropoutCache, &g)?])
            }
            (Head::Gru { cell, fc }, HeadCache::Gru { steps, drop, fc: fc_cache }) => {
                let g = fc.backward(params, grads, fc_cache, grad_logits)?;
                let mut gh = drop.backward(params, grads, &DropoutCache, &g)?;
                let mut grad_rows = vec![Tensor::zeros(&[1]); steps.len()];
                for (t, step) in steps.iter().enumerate().rev() {
                    let (gx, gprev) = cell.backward(params, grads, step, &gh)?;
                    grad_rows[t] = gx;
                    gh = gprev;
                }
                self.rows_grad_to_features(grad_rows, self.spec.frames_per_sample())
            }
            (
                Head::Attention { attn, fc1, fc2 },
                HeadCache::Attention {
                    attn: attn_cache,
                    fc1: fc1_cache,
                    relu,
                    drop,
                    fc2: fc2_cache,
                },
            ) => {
                let g = fc2.backward(params, grads, fc2_cache, grad_logits)?;
                let g = drop.backward(params, grads, &DropoutCache, &g)?;
                let g = Relu.backward(params, grads, relu, &g)?;
                let g = fc1.backward(params, grads, fc1_cache, &g)?;
                let scale = 1.0 / attn.tokens as f64;
                let spread: Vec<f64> = (0..attn.tokens).flat_map(|_| g.data().iter().map(|v| v * scale)).collect();
                let gt = attn.backward(params, grads, attn_cache, &Tensor::new(&[attn.tokens, attn.dim], spread)?)?;
                let d = self.spec.feature_dim();
                Ok(gt.data().chunks_exact(d).map(|c| Tensor::vector(c.to_vec())).collect())
            }
            _ => Err(Error::State("head cache does not belong to this head".into())),
        }
    }

    /// Full forward from frames (`[1, H, W]` tensors).
    pub fn forward<R: Rng + ?Sized>(
        &self,
        params: &Params,
        frames: &[Tensor],
        rng: Option<&mut R>,
    ) -> Result<(HeadOutput, ModelCache)> {
        let mut feats = Vec::with_capacity(frames.len());
        let mut caches = Vec::with_capacity(frames.len());
        for f in frames {
            let (x, c) = self.features(params, f)?;
            feats.push(x);
            caches.push(c);
        }
        let (out, head) = self.head_forward(params, &feats, rng)?;
        Ok((out, ModelCache { backbone: caches, head }))
    }

    /// Backward through the head and, when `train_backbone` is set, the
    /// backbone as well.
    pub fn backward(
        &self,
        params: &Params,
        grads: &mut Gradients,
        cache: &ModelCache,
        grad_logits: &Tensor,
        train_backbone: bool,
    ) -> Result<()> {
        let feat_grads = self.head_backward(params, grads, &cache.head, grad_logits)?;
        if train_backbone {
            for (g, c) in feat_grads.iter().zip(&cache.backbone) {
                self.backbone.backward(params, grads, c, g)?;
            }
        }
        Ok(())
    }

    /// Evaluation-mode class probabilities from precomputed features.
    pub fn predict_features(&self, params: &Params, feats: &[Tensor]) -> Result<Tensor> {
        if self.kind() == HeadKind::MeanVote {
            if feats.len() != self.spec.n_frames {
                return Err(Error::Dimension(format!(
                    "mean vote expects {} frames, got {}",
                    self.spec.n_frames,
                    feats.len()
                )));
            }
            let Head::Image { fc } = &self.head else {
                unreachable!("mean vote uses the image head")
            };
            let rows = feats
                .iter()
                .map(|f| Ok(softmax(&fc.forward(params, f)?.0)))
                .collect::<Result<Vec<_>>>()?;
            return mean_vote(&rows);
        }
        Ok(self.head_forward::<rand_chacha::ChaCha8Rng>(params, feats, None)?.0.probs)
    }

    /// Evaluation-mode class probabilities from frames.
    pub fn predict(&self, params: &Params, frames: &[Tensor]) -> Result<Tensor> {
        let feats = frames
            .iter()
            .map(|f| Ok(self.features(params, f)?.0))
            .collect::<Result<Vec<_>>>()?;
        self.predict_features(params, &feats)
    }
}

fn mean_rows(m: &Tensor, rows: usize, cols: usize) -> Tensor {
    let mut acc = vec![0.0; cols];
    for row in m.data().chunks_exact(cols) {
        acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    Tensor::vector(acc.into_iter().map(|a| a / rows as f64).collect())
}
