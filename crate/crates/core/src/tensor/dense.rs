use super::gemm::{gemm, N, T};
use super::{Gradients, Init, Layer, ParamId, ParamStore, Params, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer `y = W·x + b` with `W` stored as `d_out × d_in`.
///
/// Accepts a single vector `[d_in]` or a batch of rows `[n, d_in]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

#[derive(Clone, Debug)]
pub struct DenseCache {
    x: Tensor,
}

impl Dense {
    /// Registers `<prefix>.w` (He-initialised) and `<prefix>.b` (zeros).
    pub fn register(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize) -> Self {
        Self::register_with(store, prefix, d_in, d_out, Init::He { fan_in: d_in })
    }

    pub fn register_with(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        init: Init,
    ) -> Self {
        let weight = store.register(&format!("{prefix}.w"), &[d_out, d_in], init, true);
        let bias = Some(store.register(&format!("{prefix}.b"), &[d_out], Init::Zeros, false));
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    /// `y = W·x` with only `<prefix>.w`.
    pub fn register_unbiased(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize, init: Init) -> Self {
        let weight = store.register(&format!("{prefix}.w"), &[d_out, d_in], init, true);
        Self {
            weight,
            bias: None,
            d_in,
            d_out,
        }
    }

    pub fn param_count(d_in: usize, d_out: usize) -> usize {
        d_in * d_out + d_out
    }

    fn rows(&self, x: &Tensor) -> Result<usize> {
        let w_shape = [self.d_out, self.d_in];
        match *x.shape() {
            [d] if d == self.d_in => Ok(1),
            [n, d] if d == self.d_in => Ok(n),
            _ => Err(Error::Dimension(format!(
                "dense weight {w_shape:?} cannot multiply input {:?}",
                x.shape()
            ))),
        }
    }

    fn out_shape(&self, x: &Tensor) -> Vec<usize> {
        match x.shape() {
            [_] => vec![self.d_out],
            [n, _] => vec![*n, self.d_out],
            _ => unreachable!("validated by rows()"),
        }
    }
}

impl Layer for Dense {
    type Cache = DenseCache;

    fn forward(&self, params: &Params, x: &Tensor) -> Result<(Tensor, DenseCache)> {
        let n = self.rows(x)?;
        let w = params.get(self.weight);
        let mut y = Tensor::zeros(&self.out_shape(x));
        if let Some(b) = self.bias {
            for row in y.data_mut().chunks_exact_mut(self.d_out) {
                row.copy_from_slice(params.get(b).data());
            }
        }
        // y(n×out) += x(n×in) · Wᵀ
        gemm(n, self.d_in, self.d_out, x.data(), N, w.data(), T, 1.0, y.data_mut());
        Ok((y, DenseCache { x: x.clone() }))
    }

    fn backward(
        &self,
        params: &Params,
        grads: &mut Gradients,
        cache: &DenseCache,
        grad_out: &Tensor,
    ) -> Result<Tensor> {
        let x = &cache.x;
        let n = self.rows(x)?;
        grad_out.expect_shape(&self.out_shape(x))?;

        // dW(out×in) += gᵀ(out×n) · x(n×in)
        gemm(
            self.d_out,
            n,
            self.d_in,
            grad_out.data(),
            T,
            x.data(),
            N,
            1.0,
            grads.get_mut(self.weight).data_mut(),
        );
        if let Some(b) = self.bias {
            let gb = grads.get_mut(b).data_mut();
            for row in grad_out.data().chunks_exact(self.d_out) {
                for (acc, g) in gb.iter_mut().zip(row) {
                    *acc += g;
                }
            }
        }
        // dx(n×in) = g(n×out) · W(out×in)
        let mut gx = x.zeros_like();
        gemm(
            n,
            self.d_out,
            self.d_in,
            grad_out.data(),
            N,
            params.get(self.weight).data(),
            N,
            0.0,
            gx.data_mut(),
        );
        Ok(gx)
    }
}
