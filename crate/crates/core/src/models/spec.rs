use serde::{Deserialize, Serialize};

use super::backbone::BackboneSpec;
use crate::error::{Error, Result};
use crate::tensor::{Dense, GruCell, MultiHeadAttention};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Dense classifier on a single frame's features.
    Image,
    /// The image classifier applied per frame with probabilities averaged.
    MeanVote,
    /// GRU over the per-frame feature vectors.
    Gru,
    /// GRU over the weaved feature rows.
    GruTfw,
    /// Multi-head self-attention over fixed-size feature tokens.
    Attention,
}

impl HeadKind {
    pub fn is_sequence(self) -> bool {
        !matches!(self, HeadKind::Image)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub n_classes: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weave_k: Option<usize>,
    /// Order in which weaved rows are fed to the GRU; natural order if unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weave_order: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_heads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fc_dim: Option<usize>,
}

impl HeadSpec {
    fn bare(kind: HeadKind, n_classes: usize, dropout: f64) -> Self {
        Self {
            kind,
            n_classes,
            dropout,
            hidden: None,
            weave_k: None,
            weave_order: None,
            token_dim: None,
            n_heads: None,
            fc_dim: None,
        }
    }

    pub fn image(n_classes: usize, dropout: f64) -> Self {
        Self::bare(HeadKind::Image, n_classes, dropout)
    }

    pub fn mean_vote(n_classes: usize) -> Self {
        Self::bare(HeadKind::MeanVote, n_classes, 0.0)
    }

    pub fn gru(n_classes: usize, hidden: usize, dropout: f64) -> Self {
        Self {
            hidden: Some(hidden),
            ..Self::bare(HeadKind::Gru, n_classes, dropout)
        }
    }

    pub fn gru_tfw(n_classes: usize, hidden: usize, k: usize, dropout: f64) -> Self {
        Self {
            hidden: Some(hidden),
            weave_k: Some(k),
            ..Self::bare(HeadKind::GruTfw, n_classes, dropout)
        }
    }

    pub fn attention(n_classes: usize, token_dim: usize, n_heads: usize, fc_dim: usize, dropout: f64) -> Self {
        Self {
            token_dim: Some(token_dim),
            n_heads: Some(n_heads),
            fc_dim: Some(fc_dim),
            ..Self::bare(HeadKind::Attention, n_classes, dropout)
        }
    }
}

/// Backbone, head and the number of frames per input sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub backbone: BackboneSpec,
    pub head: HeadSpec,
    pub n_frames: usize,
}

fn positive(name: &str, v: Option<usize>) -> Result<usize> {
    match v {
        Some(v) if v > 0 => Ok(v),
        Some(_) => Err(Error::Config(format!("{name} must be positive"))),
        None => Err(Error::Config(format!("{name} is required for this head"))),
    }
}

impl ModelSpec {
    /// Desk-scale defaults for each head kind on the default backbone.
    pub fn desk(kind: HeadKind, n_classes: usize) -> Self {
        let backbone = BackboneSpec::default();
        let d = backbone.feature_dim();
        let n_frames = if kind == HeadKind::Image { 1 } else { 4 };
        let head = match kind {
            HeadKind::Image => HeadSpec::image(n_classes, 0.6),
            HeadKind::MeanVote => HeadSpec::mean_vote(n_classes),
            HeadKind::Gru => HeadSpec::gru(n_classes, d, 0.5),
            HeadKind::GruTfw => HeadSpec::gru_tfw(n_classes, d, n_frames, 0.5),
            HeadKind::Attention => HeadSpec::attention(n_classes, d / 4, 4, d, 0.5),
        };
        Self {
            backbone,
            head,
            n_frames,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.feature_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        let h = &self.head;
        if h.n_classes < 2 {
            return Err(Error::Config("a classifier needs at least 2 classes".into()));
        }
        if !(0.0..1.0).contains(&h.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", h.dropout)));
        }
        if self.n_frames == 0 {
            return Err(Error::Config("n_frames must be at least 1".into()));
        }
        if h.kind == HeadKind::Image && self.n_frames != 1 {
            return Err(Error::Config("the image head takes exactly one frame".into()));
        }
        let d = self.feature_dim();
        let gru = matches!(h.kind, HeadKind::Gru | HeadKind::GruTfw);
        let attn = h.kind == HeadKind::Attention;
        let tfw = h.kind == HeadKind::GruTfw;
        let unexpected = [
            ("hidden", h.hidden.is_some() && !gru),
            ("weave_k", h.weave_k.is_some() && !tfw),
            ("weave_order", h.weave_order.is_some() && !tfw),
            ("token_dim", h.token_dim.is_some() && !attn),
            ("n_heads", h.n_heads.is_some() && !attn),
            ("fc_dim", h.fc_dim.is_some() && !attn),
        ];
        if let Some((name, _)) = unexpected.iter().find(|(_, bad)| *bad) {
            return Err(Error::Config(format!("{name} does not apply to a {:?} head", h.kind)));
        }
        if gru {
            positive("hidden", h.hidden)?;
        }
        if tfw {
            let k = positive("weave_k", h.weave_k)?;
            if !d.is_multiple_of(k) {
                return Err(Error::Config(format!(
                    "feature length D={d} is not divisible by K={k}"
                )));
            }
            if let Some(order) = &h.weave_order {
                let mut sorted = order.clone();
                sorted.sort_unstable();
                if sorted != (0..k).collect::<Vec<_>>() {
                    return Err(Error::Config(format!("weave_order {order:?} is not a permutation of 0..{k}")));
                }
            }
        }
        if attn {
            let token_dim = positive("token_dim", h.token_dim)?;
            let heads = positive("n_heads", h.n_heads)?;
            positive("fc_dim", h.fc_dim)?;
            if !(self.n_frames * d).is_multiple_of(token_dim) {
                return Err(Error::Config(format!(
                    "{} features of length {d} do not split into tokens of {token_dim}",
                    self.n_frames
                )));
            }
            if token_dim % heads != 0 {
                return Err(Error::Config(format!(
                    "token dimension {token_dim} is not divisible by {heads} heads"
                )));
            }
        }
        Ok(())
    }

    /// Frames consumed per prediction.
    pub fn frames_per_sample(&self) -> usize {
        match self.head.kind {
            HeadKind::Image => 1,
            _ => self.n_frames,
        }
    }

    /// Length of each row fed to the GRU.
    pub fn gru_input_dim(&self) -> Option<usize> {
        let d = self.feature_dim();
        match self.head.kind {
            HeadKind::Gru => Some(d),
            HeadKind::GruTfw => self.head.weave_k.map(|k| self.n_frames * d / k),
            _ => None,
        }
    }

    pub fn tokens(&self) -> Option<usize> {
        self.head.token_dim.map(|t| self.n_frames * self.feature_dim() / t)
    }

    /// Learnable scalars implied by the topology.
    pub fn param_count(&self) -> usize {
        let d = self.feature_dim();
        let c = self.head.n_classes;
        let head = match self.head.kind {
            HeadKind::Image | HeadKind::MeanVote => Dense::param_count(d, c),
            HeadKind::Gru | HeadKind::GruTfw => {
                let hidden = self.head.hidden.unwrap_or(0);
                GruCell::param_count(self.gru_input_dim().unwrap_or(0), hidden) + Dense::param_count(hidden, c)
            }
            HeadKind::Attention => {
                let t = self.head.token_dim.unwrap_or(0);
                let fc = self.head.fc_dim.unwrap_or(0);
                MultiHeadAttention::param_count(self.tokens().unwrap_or(0), t)
                    + Dense::param_count(t, fc)
                    + Dense::param_count(fc, c)
            }
        };
        self.backbone.param_count() + head
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}
