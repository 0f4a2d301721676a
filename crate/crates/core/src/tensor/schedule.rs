use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    CyclicTriangular,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub max_lr: f64,
    pub base_lr: f64,
    pub cycle_steps: usize,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            max_lr: lr,
            base_lr: lr,
            cycle_steps: 1,
        }
    }

    /// Triangular cycle with `base_lr = max_lr / 10`.
    pub fn cyclic(max_lr: f64, cycle_steps: usize) -> Self {
        Self {
            kind: ScheduleKind::CyclicTriangular,
            max_lr,
            base_lr: max_lr / 10.0,
            cycle_steps: cycle_steps.max(1),
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        lr_at(self, step)
    }
}

/// Learning rate at an optimizer step: a triangular wave starting at
/// `base_lr`, peaking at `max_lr` half way through each cycle.
pub fn lr_at(schedule: &LrSchedule, step: usize) -> f64 {
    match schedule.kind {
        ScheduleKind::Constant => schedule.max_lr,
        ScheduleKind::CyclicTriangular => {
            let cycle = schedule.cycle_steps.max(1) as f64;
            let pos = (step % schedule.cycle_steps.max(1)) as f64;
            let distance = (2.0 * pos / cycle - 1.0).abs();
            let lr = schedule.base_lr + (schedule.max_lr - schedule.base_lr) * (1.0 - distance);
            lr.clamp(schedule.base_lr, schedule.max_lr)
        }
    }
}
