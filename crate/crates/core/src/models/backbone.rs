use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    Conv2d, ConvCache, Dense, DenseCache, GlobalAvgPool, Gradients, Layer, ParamStore, Params, PoolCache, Relu,
    ReluCache, Tensor,
};

pub const BACKBONE_PREFIX: &str = "backbone.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub channels: usize,
    pub blocks: usize,
    /// Halve the spatial extent in the first block of the stage.
    pub downsample: bool,
}

/// Residual convolutional feature extractor for square single-channel
/// frames.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub input_size: usize,
    pub stem_channels: usize,
    pub stages: Vec<StageSpec>,
    /// Width of the projection after pooling; `None` keeps the pooled
    /// channels as the feature vector.
    pub feature_dim: Option<usize>,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        let stage = |channels, downsample| StageSpec {
            channels,
            blocks: 1,
            downsample,
        };
        Self {
            input_size: 32,
            stem_channels: 8,
            stages: vec![stage(8, false), stage(16, true), stage(32, true)],
            feature_dim: Some(64),
        }
    }
}

impl BackboneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.stem_channels == 0 || self.stages.is_empty() {
            return Err(Error::Config("backbone needs an input size, a stem and at least one stage".into()));
        }
        let mut extent = self.input_size;
        for (i, s) in self.stages.iter().enumerate() {
            if s.channels == 0 || s.blocks == 0 {
                return Err(Error::Config(format!("stage {i} needs positive channels and blocks")));
            }
            if s.downsample {
                if !extent.is_multiple_of(2) || extent < 2 {
                    return Err(Error::Config(format!(
                        "stage {i} cannot halve an extent of {extent}"
                    )));
                }
                extent /= 2;
            }
        }
        if self.feature_dim == Some(0) {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
            .unwrap_or_else(|| self.stages.last().map_or(self.stem_channels, |s| s.channels))
    }

    /// `(c_in, c_out, downsample)` for every residual block in order.
    fn blocks(&self) -> Vec<(usize, usize, bool)> {
        let mut c_in = self.stem_channels;
        let mut out = Vec::new();
        for s in &self.stages {
            for b in 0..s.blocks {
                out.push((c_in, s.channels, s.downsample && b == 0));
                c_in = s.channels;
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        let mut total = Conv2d::param_count(1, self.stem_channels, 3);
        for (c_in, c_out, down) in self.blocks() {
            let first = if down { 4 } else { 3 };
            total += Conv2d::param_count(c_in, c_out, first) + Conv2d::param_count(c_out, c_out, 3);
            if down {
                total += Conv2d::param_count(c_in, c_out, 2);
            } else if c_in != c_out {
                total += Conv2d::param_count(c_in, c_out, 1);
            }
        }
        let last = self.stages.last().map_or(self.stem_channels, |s| s.channels);
        if let Some(d) = self.feature_dim {
            total += Dense::param_count(last, d);
        }
        total
    }
}

/// `relu(conv2(relu(conv1(x))) + skip(x))`. Downsampling blocks use a 4×4
/// stride-2 first convolution and a 2×2 stride-2 projection on the skip
/// path; channel changes without downsampling use a 1×1 projection.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub skip: Option<Conv2d>,
}

#[derive(Clone, Debug)]
pub struct BlockCache {
    c1: ConvCache,
    r1: ReluCache,
    c2: ConvCache,
    skip: Option<ConvCache>,
    out: ReluCache,
}

impl ResidualBlock {
    fn register(store: &mut ParamStore, prefix: &str, c_in: usize, c_out: usize, down: bool) -> Self {
        let conv1 = if down {
            Conv2d::register(store, &format!("{prefix}.conv1"), c_in, c_out, 4, 2, 1)
        } else {
            Conv2d::register(store, &format!("{prefix}.conv1"), c_in, c_out, 3, 1, 1)
        };
        let conv2 = Conv2d::register(store, &format!("{prefix}.conv2"), c_out, c_out, 3, 1, 1);
        let skip = if down {
            Some(Conv2d::register(store, &format!("{prefix}.skip"), c_in, c_out, 2, 2, 0))
        } else if c_in != c_out {
            Some(Conv2d::register(store, &format!("{prefix}.skip"), c_in, c_out, 1, 1, 0))
        } else {
            None
        };
        Self { conv1, conv2, skip }
    }
}

impl Layer for ResidualBlock {
    type Cache = BlockCache;

    fn forward(&self, params: &Params, x: &Tensor) -> Result<(Tensor, BlockCache)> {
        let (a, c1) = self.conv1.forward(params, x)?;
        let (a, r1) = Relu.forward(params, &a)?;
        let (mut m, c2) = self.conv2.forward(params, &a)?;
        let skip = match &self.skip {
            Some(p) => {
                let (s, cache) = p.forward(params, x)?;
                m.add_assign(&s)?;
                Some(cache)
            }
            None => {
                m.add_assign(x)?;
                None
            }
        };
        let (y, out) = Relu.forward(params, &m)?;
        Ok((y, BlockCache { c1, r1, c2, skip, out }))
    }

    fn backward(&self, params: &Params, grads: &mut Gradients, cache: &BlockCache, grad_out: &Tensor) -> Result<Tensor> {
        let g = Relu.backward(params, grads, &cache.out, grad_out)?;
        let ga = self.conv2.backward(params, grads, &cache.c2, &g)?;
        let ga = Relu.backward(params, grads, &cache.r1, &ga)?;
        let mut gx = self.conv1.backward(params, grads, &cache.c1, &ga)?;
        match (&self.skip, &cache.skip) {
            (Some(p), Some(c)) => gx.add_assign(&p.backward(params, grads, c, &g)?)?,
            _ => gx.add_assign(&g)?,
        }
        Ok(gx)
    }
}

/// Stem convolution, residual stages, global average pooling and an
/// optional ReLU projection. The output is the per-frame feature vector.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub spec: BackboneSpec,
    pub stem: Conv2d,
    pub blocks: Vec<ResidualBlock>,
    pub proj: Option<Dense>,
}

#[derive(Clone, Debug)]
pub struct BackboneCache {
    stem: ConvCache,
    stem_relu: ReluCache,
    blocks: Vec<BlockCache>,
    pool: PoolCache,
    proj: Option<(DenseCache, ReluCache)>,
}

impl Backbone {
    pub fn register(store: &mut ParamStore, spec: &BackboneSpec) -> Result<Self> {
        spec.validate()?;
        let p = BACKBONE_PREFIX;
        let stem = Conv2d::register(store, &format!("{p}stem"), 1, spec.stem_channels, 3, 1, 1);
        let blocks = spec
            .blocks()
            .into_iter()
            .enumerate()
            .map(|(i, (c_in, c_out, down))| ResidualBlock::register(store, &format!("{p}block{i}"), c_in, c_out, down))
            .collect();
        let last = spec.stages.last().map_or(spec.stem_channels, |s| s.channels);
        let proj = spec.feature_dim.map(|d| Dense::register(store, &format!("{p}proj"), last, d));
        Ok(Self {
            spec: spec.clone(),
            stem,
            blocks,
            proj,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim()
    }
}

impl Layer for Backbone {
    type Cache = BackboneCache;

    fn forward(&self, params: &Params, x: &Tensor) -> Result<(Tensor, BackboneCache)> {
        let n = self.spec.input_size;
        if x.shape() != [1, n, n] {
            return Err(Error::Dimension(format!(
                "backbone expects a [1, {n}, {n}] frame, got {:?}",
                x.shape()
            )));
        }
        let (h, stem) = self.stem.forward(params, x)?;
        let (mut h, stem_relu) = Relu.forward(params, &h)?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, cache) = b.forward(params, &h)?;
            blocks.push(cache);
            h = next;
        }
        let (mut h, pool) = GlobalAvgPool.forward(params, &h)?;
        let proj = match &self.proj {
            Some(dense) => {
                let (y, dc) = dense.forward(params, &h)?;
                let (y, rc) = Relu.forward(params, &y)?;
                h = y;
                Some((dc, rc))
            }
            None => None,
        };
        Ok((
            h,
            BackboneCache {
                stem,
                stem_relu,
                blocks,
                pool,
                proj,
            },
        ))
    }

    fn backward(&self, params: &Params, grads: &mut Gradients, cache: &BackboneCache, grad_out: &Tensor) -> Result<Tensor> {
        let mut g = grad_out.clone();
        if let (Some(dense), Some((dc, rc))) = (&self.proj, &cache.proj) {
            g = Relu.backward(params, grads, rc, &g)?;
            g = dense.backward(params, grads, dc, &g)?;
        }
        g = GlobalAvgPool.backward(params, grads, &cache.pool, &g)?;
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            g = b.backward(params, grads, c, &g)?;
        }
        g = Relu.backward(params, grads, &cache.stem_relu, &g)?;
        self.stem.backward(params, grads, &cache.stem, &g)
    }
}
