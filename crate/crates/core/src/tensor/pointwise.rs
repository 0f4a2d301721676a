use rand::Rng;

use super::{Gradients, Layer, Params, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default)]
pub struct Relu;

#[derive(Clone, Debug)]
pub struct ReluCache {
    active: Vec<bool>,
}

impl Layer for Relu {
    type Cache = ReluCache;

    fn forward(&self, _: &Params, x: &Tensor) -> Result<(Tensor, ReluCache)> {
        let mut y = x.clone();
        let mut active = Vec::with_capacity(x.len());
        for v in y.data_mut() {
            let on = *v > 0.0;
            if *v <= 0.0 {
                *v = 0.0;
            }
            active.push(on);
        }
        Ok((y, ReluCache { active }))
    }

    fn backward(&self, _: &Params, _: &mut Gradients, cache: &ReluCache, grad_out: &Tensor) -> Result<Tensor> {
        if grad_out.len() != cache.active.len() {
            return Err(Error::Dimension(format!(
                "relu cached {} values, gradient has shape {:?}",
                cache.active.len(),
                grad_out.shape()
            )));
        }
        let mut g = grad_out.clone();
        for (v, &on) in g.data_mut().iter_mut().zip(&cache.active) {
            if !on {
                *v = 0.0;
            }
        }
        Ok(g)
    }
}

/// Averages each channel of a `C × H × W` map down to a length-`C` vector.
#[derive(Clone, Copy, Debug, Default)]
pub struct GlobalAvgPool;

#[derive(Clone, Debug)]
pub struct PoolCache {
    in_shape: [usize; 3],
}

impl Layer for GlobalAvgPool {
    type Cache = PoolCache;

    fn forward(&self, _: &Params, x: &Tensor) -> Result<(Tensor, PoolCache)> {
        let [c, h, w] = match *x.shape() {
            [c, h, w] => [c, h, w],
            _ => {
                return Err(Error::Dimension(format!(
                    "global pooling expects [C, H, W], got {:?}",
                    x.shape()
                )))
            }
        };
        let area = (h * w) as f64;
        let means = x.data().chunks_exact(h * w).map(|p| p.iter().sum::<f64>() / area).collect();
        Ok((Tensor::vector(means), PoolCache { in_shape: [c, h, w] }))
    }

    fn backward(&self, _: &Params, _: &mut Gradients, cache: &PoolCache, grad_out: &Tensor) -> Result<Tensor> {
        let [c, h, w] = cache.in_shape;
        grad_out.expect_shape(&[c])?;
        let area = (h * w) as f64;
        let mut gx = Vec::with_capacity(c * h * w);
        for &g in grad_out.data() {
            gx.extend(std::iter::repeat_n(g / area, h * w));
        }
        Tensor::new(&cache.in_shape, gx)
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - p)` so evaluation
/// needs no rescaling. A layer built with [`Dropout::eval`] is the identity.
#[derive(Clone, Debug)]
pub struct Dropout {
    mask: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug)]
pub struct DropoutCache;

impl Dropout {
    pub fn eval() -> Self {
        Self { mask: None }
    }

    /// Draws a fresh mask for `len` units with drop probability `p`.
    pub fn sample<R: Rng + ?Sized>(p: f64, len: usize, rng: &mut R) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout probability must lie in [0, 1)");
        if p == 0.0 {
            return Self::eval();
        }
        let keep = 1.0 / (1.0 - p);
        let mask = (0..len)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        Self { mask: Some(mask) }
    }

    /// Training-mode dropout when `rng` is given, identity otherwise.
    pub fn for_mode<R: Rng + ?Sized>(p: f64, len: usize, rng: Option<&mut R>) -> Self {
        match rng {
            Some(rng) => Self::sample(p, len, rng),
            None => Self::eval(),
        }
    }

    pub fn mask(&self) -> Option<&[f64]> {
        self.mask.as_deref()
    }

    fn apply(&self, t: &Tensor) -> Result<Tensor> {
        let mut y = t.clone();
        if let Some(mask) = &self.mask {
            if mask.len() != t.len() {
                return Err(Error::Dimension(format!(
                    "dropout mask covers {} units, input has shape {:?}",
                    mask.len(),
                    t.shape()
                )));
            }
            y.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
        }
        Ok(y)
    }
}

impl Layer for Dropout {
    type Cache = DropoutCache;

    fn forward(&self, _: &Params, x: &Tensor) -> Result<(Tensor, DropoutCache)> {
        Ok((self.apply(x)?, DropoutCache))
    }

    fn backward(&self, _: &Params, _: &mut Gradients, _: &DropoutCache, grad_out: &Tensor) -> Result<Tensor> {
        self.apply(grad_out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_gates_gradient() {
        let mut store = ParamStore::new();
        let x = Tensor::vector(vec![-1.0, 2.0]);
        let (y, cache) = Relu.forward(&store.params, &x).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);
        let g = Relu
            .backward(&store.params, &mut store.grads, &cache, &Tensor::vector(vec![5.0, 5.0]))
            .unwrap();
        assert_eq!(g.data(), &[0.0, 5.0]);
    }

    #[test]
    fn pooling_averages_channels() {
        let store = ParamStore::new();
        let x = Tensor::new(&[2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 8.0]).unwrap();
        let (y, _) = GlobalAvgPool.forward(&store.params, &x).unwrap();
        assert_eq!(y.data(), &[2.5, 2.0]);
    }

    #[test]
    fn eval_dropout_is_identity() {
        let store = ParamStore::new();
        let x = Tensor::vector(vec![1.0, -2.0, 3.0]);
        let (y, _) = Dropout::eval().forward(&store.params, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn training_dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Dropout::sample(0.6, 100_000, &mut rng);
        let mask = d.mask().unwrap();
        let mean = mask.iter().sum::<f64>() / mask.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        let kept = mask.iter().filter(|&&m| m > 0.0).count() as f64 / mask.len() as f64;
        assert!((kept - 0.4).abs() < 0.01);
    }
}
