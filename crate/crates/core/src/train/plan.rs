use std::fmt::Write as _;

use super::{Result, TrainError};
use crate::tensor::{GroupSet, LrSchedule, ParamGroup};

/// Per-stage training settings.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    pub stage: u8,
    pub trainable: GroupSet,
    pub epochs: usize,
    pub schedule: LrSchedule,
    pub batch: usize,
    pub seed: u64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Probability that a stream item is a position-caption item.
    pub caption_ratio: f64,
}

/// Optional replacements for the stage defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlanOverrides {
    pub epochs: Option<usize>,
    pub base_lr: Option<f64>,
    pub batch: Option<usize>,
    pub seed: Option<u64>,
    pub caption_ratio: Option<f64>,
    pub clip_norm: Option<Option<f64>>,
}

pub const DEFAULT_CAPTION_RATIO: f64 = 0.25;

/// Default plan for `stage`. `steps_per_epoch` sizes warmup and decay periods.
pub fn build_stage_plan(stage: u8, steps_per_epoch: usize, o: &PlanOverrides) -> Result<StagePlan> {
    use ParamGroup::*;
    let (trainable, epochs, base) = match stage {
        1 => (GroupSet::of(&[Psi, Theta]), 5, 1e-3),
        2 => (GroupSet::of(&[Zeta, Beta]), 30, 3e-3),
        3 => (GroupSet::of(&[Zeta, Beta, Psi, Theta]), 10, 1e-3),
        other => return Err(TrainError::Stage(other)),
    };
    let epochs = o.epochs.unwrap_or(epochs);
    let base = o.base_lr.unwrap_or(base);
    let total = (epochs * steps_per_epoch.max(1)).max(1);
    let warmup = (total / 20).max(1);
    let schedule = match stage {
        2 => LrSchedule::WarmupStepDecay { base, warmup, factor: 0.5, period: (total / 3).max(1) },
        _ => LrSchedule::WarmupCosine { base, warmup, total, floor: base / 10.0 },
    };
    let caption_ratio = if stage == 1 { 0.0 } else { o.caption_ratio.unwrap_or(DEFAULT_CAPTION_RATIO) };
    if !(0.0..=1.0).contains(&caption_ratio) {
        return Err(TrainError::Ratio(caption_ratio));
    }
    let plan = StagePlan {
        stage,
        trainable,
        epochs,
        schedule,
        batch: o.batch.unwrap_or(4).max(1),
        seed: o.seed.unwrap_or(0),
        clip_norm: o.clip_norm.unwrap_or(Some(1.0)),
        caption_ratio,
    };
    plan.validate()?;
    Ok(plan)
}

impl StagePlan {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.stage) {
            return Err(TrainError::Stage(self.stage));
        }
        if self.trainable.contains(ParamGroup::Phi) {
            return Err(TrainError::Plan("the audio encoder (φ) is never trainable".into()));
        }
        if self.trainable.is_empty() {
            return Err(TrainError::Plan("no trainable groups".into()));
        }
        if !(0.0..=1.0).contains(&self.caption_ratio) {
            return Err(TrainError::Ratio(self.caption_ratio));
        }
        Ok(())
    }

    /// Learning rate for the `n`-th update, counted from 1.
    pub fn lr_for_update(&self, n: usize) -> f64 {
        self.schedule.lr_at(n)
    }

    /// `key = value` lines for the run manifest.
    pub fn manifest(&self, prefix: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{prefix}.stage = {}", self.stage);
        let _ = writeln!(s, "{prefix}.trainable = {}", self.trainable.iter().map(ParamGroup::ascii).collect::<Vec<_>>().join(","));
        let _ = writeln!(s, "{prefix}.epochs = {}", self.epochs);
        let _ = writeln!(s, "{prefix}.schedule = {}", self.schedule.describe());
        let _ = writeln!(s, "{prefix}.batch = {}", self.batch);
        let _ = writeln!(s, "{prefix}.seed = {}", self.seed);
        let _ = writeln!(s, "{prefix}.clip_norm = {}", self.clip_norm.map_or("none".into(), |c| c.to_string()));
        let _ = writeln!(s, "{prefix}.caption_ratio = {}", self.caption_ratio);
        s
    }
}
