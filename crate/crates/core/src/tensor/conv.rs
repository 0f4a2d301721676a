use super::gemm::{gemm, N, T};
use super::{Gradients, Init, Layer, ParamId, ParamStore, Params, Tensor};
use crate::error::{Error, Result};

/// 2-D cross-correlation over a `C_in × H × W` input with zero padding.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub size: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Clone, Debug)]
pub struct ConvCache {
    in_shape: [usize; 3],
    out_hw: (usize, usize),
    cols: Vec<f64>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        size: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        assert!(size > 0 && stride > 0, "kernel size and stride must be positive");
        let fan_in = c_in * size * size;
        let kernel = store.register(
            &format!("{prefix}.k"),
            &[c_out, c_in, size, size],
            Init::He { fan_in },
            true,
        );
        let bias = store.register(&format!("{prefix}.b"), &[c_out], Init::Zeros, false);
        Self {
            kernel,
            bias,
            c_in,
            c_out,
            size,
            stride,
            pad,
        }
    }

    pub fn param_count(c_in: usize, c_out: usize, size: usize) -> usize {
        c_out * c_in * size * size + c_out
    }

    /// Output extent along one axis, or a configuration error when the
    /// window does not tile the padded input exactly.
    pub fn out_extent(&self, extent: usize) -> Result<usize> {
        let padded = extent + 2 * self.pad;
        if padded < self.size || !(padded - self.size).is_multiple_of(self.stride) {
            return Err(Error::Config(format!(
                "conv k={} stride={} pad={} does not tile an extent of {extent}",
                self.size, self.stride, self.pad
            )));
        }
        Ok((padded - self.size) / self.stride + 1)
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> Result<[usize; 3]> {
        match *in_shape {
            [c, h, w] if c == self.c_in => Ok([self.c_out, self.out_extent(h)?, self.out_extent(w)?]),
            _ => Err(Error::Dimension(format!(
                "conv expects [{}, H, W], got {in_shape:?}",
                self.c_in
            ))),
        }
    }

    fn im2col(&self, x: &[f64], [c_in, h, w]: [usize; 3], (oh, ow): (usize, usize)) -> Vec<f64> {
        let k = self.size;
        let mut cols = vec![0.0; c_in * k * k * oh * ow];
        for c in 0..c_in {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((c * k + ki) * k + kj) * oh * ow;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut cols[row + oy * ow..row + (oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], [c_in, h, w]: [usize; 3], (oh, ow): (usize, usize)) -> Vec<f64> {
        let k = self.size;
        let mut x = vec![0.0; c_in * h * w];
        for c in 0..c_in {
            let plane = &mut x[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((c * k + ki) * k + kj) * oh * ow;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &cols[row + oy * ow..row + (oy + 1) * ow];
                        for (ox, s) in src.iter().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                plane[iy as usize * w + ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

impl Layer for Conv2d {
    type Cache = ConvCache;

    fn forward(&self, params: &Params, x: &Tensor) -> Result<(Tensor, ConvCache)> {
        let [c_out, oh, ow] = self.out_shape(x.shape())?;
        let in_shape = [x.shape()[0], x.shape()[1], x.shape()[2]];
        let cols = self.im2col(x.data(), in_shape, (oh, ow));
        let patch = self.c_in * self.size * self.size;
        let bias = params.get(self.bias).data();

        let mut y = Tensor::zeros(&[c_out, oh, ow]);
        for (plane, &b) in y.data_mut().chunks_exact_mut(oh * ow).zip(bias) {
            plane.fill(b);
        }
        gemm(
            c_out,
            patch,
            oh * ow,
            params.get(self.kernel).data(),
            N,
            &cols,
            N,
            1.0,
            y.data_mut(),
        );
        Ok((
            y,
            ConvCache {
                in_shape,
                out_hw: (oh, ow),
                cols,
            },
        ))
    }

    fn backward(
        &self,
        params: &Params,
        grads: &mut Gradients,
        cache: &ConvCache,
        grad_out: &Tensor,
    ) -> Result<Tensor> {
        let (oh, ow) = cache.out_hw;
        grad_out.expect_shape(&[self.c_out, oh, ow])?;
        let patch = self.c_in * self.size * self.size;
        let spatial = oh * ow;

        gemm(
            self.c_out,
            spatial,
            patch,
            grad_out.data(),
            N,
            &cache.cols,
            T,
            1.0,
            grads.get_mut(self.kernel).data_mut(),
        );
        let gb = grads.get_mut(self.bias).data_mut();
        for (acc, plane) in gb.iter_mut().zip(grad_out.data().chunks_exact(spatial)) {
            *acc += plane.iter().sum::<f64>();
        }

        let mut gcols = vec![0.0; patch * spatial];
        gemm(
            patch,
            self.c_out,
            spatial,
            params.get(self.kernel).data(),
            T,
            grad_out.data(),
            N,
            0.0,
            &mut gcols,
        );
        let gx = self.col2im(&gcols, cache.in_shape, cache.out_hw);
        Tensor::new(&cache.in_shape, gx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn conv(c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize) -> (ParamStore, Conv2d) {
        let mut store = ParamStore::new();
        let layer = Conv2d::register(&mut store, "conv", c_in, c_out, k, stride, pad);
        (store, layer)
    }

    /// Direct six-deep loop, independent of im2col.
    fn naive_conv(
        x: &[f64],
        (c_in, h, w): (usize, usize, usize),
        kernel: &[f64],
        bias: &[f64],
        (c_out, k, stride, pad): (usize, usize, usize, usize),
    ) -> Vec<f64> {
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; c_out * oh * ow];
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..c_in {
                        for ki in 0..k {
                            for kj in 0..k {
                                let iy = (oy * stride + ki) as isize - pad as isize;
                                let ix = (ox * stride + kj) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += kernel[((co * c_in + ci) * k + ki) * k + kj]
                                        * x[(ci * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn unit_kernel_is_identity() {
        let (mut store, layer) = conv(1, 1, 1, 1, 0);
        store.params.get_mut(layer.kernel).data_mut()[0] = 1.0;
        let x = Tensor::new(&[1, 3, 4], (0..12).map(|v| v as f64 * 0.5).collect()).unwrap();
        let (y, _) = layer.forward(&store.params, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn impulse_response_of_box_kernel() {
        let (mut store, layer) = conv(1, 1, 3, 1, 1);
        store.params.get_mut(layer.kernel).fill(1.0);
        let mut x = Tensor::zeros(&[1, 5, 5]);
        x.data_mut()[2 * 5 + 2] = 1.0;
        let (y, _) = layer.forward(&store.params, &x).unwrap();
        for r in 0..5 {
            for c in 0..5 {
                let inside = (1..=3).contains(&r) && (1..=3).contains(&c);
                assert_eq!(y.data()[r * 5 + c], if inside { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn matches_naive_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(stride, pad) in &[(1, 1), (2, 1), (1, 0)] {
            let (mut store, layer) = conv(2, 3, 3, stride, pad);
            store.params.initialize(&mut rng);
            store
                .params
                .get_mut(layer.bias)
                .data_mut()
                .iter_mut()
                .for_each(|b| *b = rng.random_range(-1.0..1.0));
            let x: Vec<f64> = (0..2 * 7 * 7).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = Tensor::new(&[2, 7, 7], x).unwrap();
            let (y, _) = layer.forward(&store.params, &x).unwrap();
            let expect = naive_conv(
                x.data(),
                (2, 7, 7),
                store.params.get(layer.kernel).data(),
                store.params.get(layer.bias).data(),
                (3, 3, stride, pad),
            );
            assert_eq!(y.len(), expect.len());
            for (a, b) in y.data().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_integral_extent_is_a_config_error() {
        let (store, layer) = conv(1, 1, 3, 2, 0);
        let x = Tensor::zeros(&[1, 6, 6]);
        assert!(matches!(layer.forward(&store.params, &x), Err(Error::Config(_))));
        let (store, layer) = conv(1, 1, 5, 1, 0);
        assert!(layer.forward(&store.params, &Tensor::zeros(&[1, 3, 3])).is_err());
    }

    #[test]
    fn wrong_channel_count_is_a_dimension_error() {
        let (store, layer) = conv(2, 1, 1, 1, 0);
        assert!(matches!(
            layer.forward(&store.params, &Tensor::zeros(&[3, 4, 4])),
            Err(Error::Dimension(_))
        ));
    }
}
