use super::dense::{Dense, DenseCache};
use super::gemm::{gemm, N, T};
use super::{Gradients, Init, Layer, ParamId, ParamStore, Params, Tensor};
use crate::error::{Error, Result};

/// Multi-head scaled dot-product self-attention over a `T × E` token matrix
/// with a learned additive positional embedding.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub tokens: usize,
    pub dim: usize,
    pub heads: usize,
    pub position: ParamId,
    query: Dense,
    key: Dense,
    value: Dense,
    output: Dense,
}

#[derive(Clone, Debug)]
pub struct AttentionCache {
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Row-stochastic `T × T` attention matrix per head.
    weights: Vec<Vec<f64>>,
    q_cache: DenseCache,
    k_cache: DenseCache,
    v_cache: DenseCache,
    o_cache: DenseCache,
}

impl AttentionCache {
    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }
}

impl MultiHeadAttention {
    pub fn register(store: &mut ParamStore, prefix: &str, tokens: usize, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "token dimension {dim} is not divisible by {heads} heads"
            )));
        }
        let position = store.register(
            &format!("{prefix}.pos"),
            &[tokens, dim],
            Init::Normal { std: 0.02 },
            false,
        );
        let bound = Init::Uniform {
            bound: (1.0 / dim as f64).sqrt(),
        };
        let query = Dense::register_with(store, &format!("{prefix}.q"), dim, dim, bound);
        // a key bias shifts every score in a row equally and cancels in the softmax
        let key = Dense::register_unbiased(store, &format!("{prefix}.k"), dim, dim, bound);
        let value = Dense::register_with(store, &format!("{prefix}.v"), dim, dim, bound);
        let output = Dense::register_with(store, &format!("{prefix}.o"), dim, dim, bound);
        Ok(Self {
            tokens,
            dim,
            heads,
            position,
            query,
            key,
            value,
            output,
        })
    }

    pub fn param_count(tokens: usize, dim: usize) -> usize {
        4 * Dense::param_count(dim, dim) - dim + tokens * dim
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Copies the columns of one head out of a `T × E` matrix.
    fn head_slice(&self, m: &Tensor, head: usize) -> Vec<f64> {
        let dh = self.head_dim();
        m.data()
            .chunks_exact(self.dim)
            .flat_map(|row| &row[head * dh..(head + 1) * dh])
            .copied()
            .collect()
    }

    fn scatter_head(&self, dst: &mut Tensor, head: usize, src: &[f64]) {
        let dh = self.head_dim();
        for (row, part) in dst.data_mut().chunks_exact_mut(self.dim).zip(src.chunks_exact(dh)) {
            for (d, s) in row[head * dh..(head + 1) * dh].iter_mut().zip(part) {
                *d += s;
            }
        }
    }
}

impl Layer for MultiHeadAttention {
    type Cache = AttentionCache;

    fn forward(&self, params: &Params, x: &Tensor) -> Result<(Tensor, AttentionCache)> {
        let (t, dh) = (self.tokens, self.head_dim());
        x.expect_shape(&[t, self.dim])?;
        let mut xp = x.clone();
        xp.add_assign(params.get(self.position))?;

        let (q, q_cache) = self.query.forward(params, &xp)?;
        let (k, k_cache) = self.key.forward(params, &xp)?;
        let (v, v_cache) = self.value.forward(params, &xp)?;

        let scale = 1.0 / (dh as f64).sqrt();
        let mut mixed = Tensor::zeros(&[t, self.dim]);
        let mut weights = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let (qh, kh, vh) = (
                self.head_slice(&q, head),
                self.head_slice(&k, head),
                self.head_slice(&v, head),
            );
            let mut scores = vec![0.0; t * t];
            gemm(t, dh, t, &qh, N, &kh, T, 0.0, &mut scores);
            for row in scores.chunks_exact_mut(t) {
                let max = row.iter().map(|s| s * scale).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for s in row.iter_mut() {
                    *s = (*s * scale - max).exp();
                    total += *s;
                }
                row.iter_mut().for_each(|s| *s /= total);
            }
            let mut out = vec![0.0; t * dh];
            gemm(t, t, dh, &scores, N, &vh, N, 0.0, &mut out);
            self.scatter_head(&mut mixed, head, &out);
            weights.push(scores);
        }

        let (y, o_cache) = self.output.forward(params, &mixed)?;
        Ok((
            y,
            AttentionCache {
                q,
                k,
                v,
                weights,
                q_cache,
                k_cache,
                v_cache,
                o_cache,
            },
        ))
    }

    fn backward(
        &self,
        params: &Params,
        grads: &mut Gradients,
        cache: &AttentionCache,
        grad_out: &Tensor,
    ) -> Result<Tensor> {
        let (t, dh) = (self.tokens, self.head_dim());
        grad_out.expect_shape(&[t, self.dim])?;
        let d_mixed = self.output.backward(params, grads, &cache.o_cache, grad_out)?;

        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Tensor::zeros(&[t, self.dim]);
        let mut dk = Tensor::zeros(&[t, self.dim]);
        let mut dv = Tensor::zeros(&[t, self.dim]);
        for head in 0..self.heads {
            let a = &cache.weights[head];
            let d_out = self.head_slice(&d_mixed, head);
            let (qh, kh, vh) = (
                self.head_slice(&cache.q, head),
                self.head_slice(&cache.k, head),
                self.head_slice(&cache.v, head),
            );

            let mut dvh = vec![0.0; t * dh];
            gemm(t, t, dh, a, T, &d_out, N, 0.0, &mut dvh);
            let mut da = vec![0.0; t * t];
            gemm(t, dh, t, &d_out, N, &vh, T, 0.0, &mut da);
            // softmax backward per row, then the 1/sqrt(dh) scaling
            for (da_row, a_row) in da.chunks_exact_mut(t).zip(a.chunks_exact(t)) {
                let inner: f64 = da_row.iter().zip(a_row).map(|(g, p)| g * p).sum();
                for (g, p) in da_row.iter_mut().zip(a_row) {
                    *g = p * (*g - inner) * scale;
                }
            }
            let mut dqh = vec![0.0; t * dh];
            gemm(t, t, dh, &da, N, &kh, N, 0.0, &mut dqh);
            let mut dkh = vec![0.0; t * dh];
            gemm(t, t, dh, &da, T, &qh, N, 0.0, &mut dkh);

            self.scatter_head(&mut dq, head, &dqh);
            self.scatter_head(&mut dk, head, &dkh);
            self.scatter_head(&mut dv, head, &dvh);
        }

        let mut dx = self.query.backward(params, grads, &cache.q_cache, &dq)?;
        dx.add_assign(&self.key.backward(params, grads, &cache.k_cache, &dk)?)?;
        dx.add_assign(&self.value.backward(params, grads, &cache.v_cache, &dv)?)?;
        grads.get_mut(self.position).add_assign(&dx)?;
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_layer(tokens: usize, dim: usize, heads: usize, seed: u64) -> (ParamStore, MultiHeadAttention) {
        let mut store = ParamStore::new();
        let layer = MultiHeadAttention::register(&mut store, "attn", tokens, dim, heads).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for id in store.params.ids().collect::<Vec<_>>() {
            for v in store.params.get_mut(id).data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        (store, layer)
    }

    #[test]
    fn identical_tokens_attend_uniformly() {
        let (mut store, layer) = random_layer(4, 8, 2, 1);
        store.params.get_mut(layer.position).fill(0.0);
        let row: Vec<f64> = (0..8).map(|i| i as f64 * 0.1 - 0.3).collect();
        let x = Tensor::from_rows(&vec![row; 4]).unwrap();
        let (_, cache) = layer.forward(&store.params, &x).unwrap();
        for head in cache.weights() {
            for w in head {
                assert!((w - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let (store, layer) = random_layer(6, 8, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::new(&[6, 8], (0..48).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let (_, cache) = layer.forward(&store.params, &x).unwrap();
        for head in cache.weights() {
            for row in head.chunks_exact(6) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                assert!(row.iter().all(|&w| w >= 0.0));
            }
        }
    }

    #[test]
    fn matches_scalar_transcription() {
        let (t, e, heads) = (4, 8, 2);
        let dh = e / heads;
        let (store, layer) = random_layer(t, e, heads, 17);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..t * e).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = |n: &str| store.params.by_name(&format!("attn.{n}")).unwrap().data().to_vec();
        let pos = p("pos");
        let proj = |w: &[f64], b: &[f64], inp: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; t * e];
            for i in 0..t {
                for o in 0..e {
                    let mut acc = b[o];
                    for j in 0..e {
                        acc += w[o * e + j] * inp[i * e + j];
                    }
                    out[i * e + o] = acc;
                }
            }
            out
        };
        let xp: Vec<f64> = x.iter().zip(&pos).map(|(a, b)| a + b).collect();
        let q = proj(&p("q.w"), &p("q.b"), &xp);
        let k = proj(&p("k.w"), &vec![0.0; e], &xp);
        let v = proj(&p("v.w"), &p("v.b"), &xp);
        let mut mixed = vec![0.0; t * e];
        for h in 0..heads {
            for i in 0..t {
                let scores: Vec<f64> = (0..t)
                    .map(|j| {
                        (0..dh).map(|c| q[i * e + h * dh + c] * k[j * e + h * dh + c]).sum::<f64>()
                            / (dh as f64).sqrt()
                    })
                    .collect();
                let z: f64 = scores.iter().map(|s| s.exp()).sum();
                for j in 0..t {
                    let a = scores[j].exp() / z;
                    for c in 0..dh {
                        mixed[i * e + h * dh + c] += a * v[j * e + h * dh + c];
                    }
                }
            }
        }
        let expect = proj(&p("o.w"), &p("o.b"), &mixed);
        let (y, _) = layer.forward(&store.params, &Tensor::new(&[t, e], x).unwrap()).unwrap();
        for (a, b) in y.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn indivisible_heads_rejected() {
        let mut store = ParamStore::new();
        assert!(matches!(
            MultiHeadAttention::register(&mut store, "a", 4, 10, 4),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn full_scale_block_adds_about_a_million_parameters() {
        // 2048-length features of four frames split into a 16 × 512 sequence
        let count = MultiHeadAttention::param_count(16, 512);
        assert_eq!(count, 4 * 512 * 512 + 3 * 512 + 16 * 512);
        assert!((1_000_000..1_100_000).contains(&count));
    }
}
