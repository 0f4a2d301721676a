//! Dense tensors, layer definitions with hand-written backward passes,
//! optimizers, the learning-rate schedule and a finite-difference checker.

mod attention;
mod conv;
mod dense;
mod gemm;
mod gradcheck;
pub mod gradsuite;
mod gru;
mod loss;
pub mod opcount;
mod optim;
mod param;
mod pointwise;
mod schedule;

use std::fmt;

use crate::error::{Error, Result};

pub use attention::{AttentionCache, MultiHeadAttention};
pub use conv::{Conv2d, ConvCache};
pub use dense::{Dense, DenseCache};
pub use gradcheck::{
    grad_check, grad_check_layer, relative_error, GradCheckEntry, GradCheckReport, GRAD_CHECK_EPS,
};
pub use gru::{GruCache, GruCell};
pub use loss::{softmax, softmax_cross_entropy, softmax_cross_entropy_backward};
pub use optim::{adam_step, sgd_momentum_step, AdamConfig, SgdConfig};
pub use param::{
    read_param_records, Gradients, Init, ParamId, ParamStore, Params, PARAM_FILE_MAGIC,
    PARAM_FILE_VERSION,
};
pub use pointwise::{Dropout, DropoutCache, GlobalAvgPool, PoolCache, Relu, ReluCache};
pub use schedule::{lr_at, LrSchedule, ScheduleKind};

/// Row-major dense array of `f64`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Dimension(format!("zero extent in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        assert!(n > 0, "zero extent in shape {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "empty vector");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a rank-2 tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(&[rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.expect_shape(other.shape())?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.data)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::Dimension(format!(
                "expected shape {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        let head = &self.data[..self.data.len().min(SHOWN)];
        if self.data.len() > SHOWN {
            write!(f, "{head:?}..")
        } else {
            write!(f, "{head:?}")
        }
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// A single-input differentiable layer.
///
/// `forward` returns the activation together with whatever the backward pass
/// needs; `backward` accumulates parameter gradients into `grads` and returns
/// the gradient with respect to the input.
pub trait Layer {
    type Cache;

    fn forward(&self, params: &Params, x: &Tensor) -> Result<(Tensor, Self::Cache)>;

    fn backward(
        &self,
        params: &Params,
        grads: &mut Gradients,
        cache: &Self::Cache,
        grad_out: &Tensor,
    ) -> Result<Tensor>;
}

/// Wraps a layer and keeps the cache of its most recent forward call.
pub struct Recorded<L: Layer> {
    layer: L,
    cache: Option<L::Cache>,
}

impl<L: Layer> Recorded<L> {
    pub fn new(layer: L) -> Self {
        Self { layer, cache: None }
    }

    pub fn layer(&self) -> &L {
        &self.layer
    }

    pub fn forward(&mut self, params: &Params, x: &Tensor) -> Result<Tensor> {
        let (y, cache) = self.layer.forward(params, x)?;
        self.cache = Some(cache);
        Ok(y)
    }

    /// Consumes the recorded cache; a second call without a new forward fails.
    pub fn backward(
        &mut self,
        params: &Params,
        grads: &mut Gradients,
        grad_out: &Tensor,
    ) -> Result<Tensor> {
        let cache = self.cache.take().ok_or_else(|| {
            Error::State(format!(
                "backward called on {} before forward",
                std::any::type_name::<L>()
            ))
        })?;
        self.layer.backward(params, grads, &cache, grad_out)
    }
}
