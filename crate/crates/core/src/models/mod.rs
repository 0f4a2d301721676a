//! Backbone, temporal feature weaving and the classification heads.

mod backbone;
mod model;
mod spec;
mod vote;
mod weave;

pub use backbone::{Backbone, BackboneCache, BackboneSpec, BlockCache, ResidualBlock, StageSpec, BACKBONE_PREFIX};
pub use model::{gru_sequence_forward, gru_unroll, HeadCache, HeadOutput, Model, ModelCache, HEAD_PREFIX};
pub use spec::{HeadKind, HeadSpec, ModelSpec};
pub use vote::mean_vote;
pub use weave::{unweave, weave, weave_source, FeatureMatrix, WeavedMatrix};
