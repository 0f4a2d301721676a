use serde::{Deserialize, Serialize};

use crate::data::{AugmentSpec, SamplingMode};
use crate::error::{Error, Result};
use crate::models::{HeadKind, ModelSpec};
use crate::tensor::{LrSchedule, ScheduleKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub optimizer: OptimizerKind,
    pub max_lr: f64,
    /// SGD momentum, or Adam's first-moment decay.
    pub momentum: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default = "cyclic")]
    pub schedule: ScheduleKind,
    /// Length of one learning-rate cycle; the whole run when unset.
    #[serde(default)]
    pub cycle_epochs: Option<usize>,
    #[serde(default)]
    pub sampling: SamplingMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub augment: AugmentSpec,
    /// Update backbone weights. Sequence models default to a frozen backbone
    /// copied from the trained image classifier.
    #[serde(default)]
    pub train_backbone: bool,
}

fn cyclic() -> ScheduleKind {
    ScheduleKind::CyclicTriangular
}

impl TrainConfig {
    /// Single-frame classifier: SGD with momentum 0.75, max lr 0.08,
    /// L2 5e-4, dropout 0.6, batch 16, 50 epochs.
    pub fn classifier(n_classes: usize) -> Self {
        Self {
            model: ModelSpec::desk(HeadKind::Image, n_classes),
            optimizer: OptimizerKind::SgdMomentum,
            max_lr: 0.08,
            momentum: 0.75,
            l2: 5e-4,
            batch_size: 16,
            epochs: 50,
            schedule: ScheduleKind::CyclicTriangular,
            cycle_epochs: None,
            sampling: SamplingMode::Consecutive,
            seed: 0,
            augment: AugmentSpec::default(),
            train_backbone: true,
        }
    }

    /// Sequence head on a frozen backbone: Adam with beta1 0.75, max lr
    /// 0.003, L2 1e-3, dropout 0.5, batch 16, 60 epochs.
    pub fn sequence(kind: HeadKind, n_classes: usize) -> Self {
        Self {
            model: ModelSpec::desk(kind, n_classes),
            optimizer: OptimizerKind::Adam,
            max_lr: 0.003,
            momentum: 0.75,
            l2: 1e-3,
            batch_size: 16,
            epochs: 60,
            schedule: ScheduleKind::CyclicTriangular,
            cycle_epochs: None,
            sampling: SamplingMode::Consecutive,
            seed: 0,
            augment: AugmentSpec::default(),
            train_backbone: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.augment.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if !(self.max_lr >= 0.0 && self.max_lr.is_finite()) {
            return bad(format!("max_lr must be finite and non-negative, got {}", self.max_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad(format!("invalid l2 {}", self.l2));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.cycle_epochs == Some(0) {
            return bad("cycle_epochs must be positive".into());
        }
        if self.model.head.kind == HeadKind::Image && !self.train_backbone {
            return bad("the image classifier must train its backbone".into());
        }
        Ok(())
    }

    pub fn schedule(&self, steps_per_epoch: usize) -> LrSchedule {
        let cycle = self.cycle_epochs.unwrap_or(self.epochs).max(1) * steps_per_epoch.max(1);
        match self.schedule {
            ScheduleKind::Constant => LrSchedule::constant(self.max_lr),
            ScheduleKind::CyclicTriangular => LrSchedule::cyclic(self.max_lr, cycle),
        }
    }
}
