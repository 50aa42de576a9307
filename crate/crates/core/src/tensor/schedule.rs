use std::f64::consts::PI;

/// Learning-rate schedule evaluated per optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant { rate: f64 },
    /// Linear ramp from 0 to `base` over `warmup` steps, then multiply by
    /// `factor` every `period` steps.
    WarmupStepDecay { base: f64, warmup: usize, factor: f64, period: usize },
    /// Linear ramp, then half-cosine from `base` down to `floor` at step `total`.
    WarmupCosine { base: f64, warmup: usize, total: usize, floor: f64 },
}

impl LrSchedule {
    pub fn lr_at(&self, step: usize) -> f64 {
        match *self {
            LrSchedule::Constant { rate } => rate,
            LrSchedule::WarmupStepDecay { base, warmup, factor, period } => {
                if step < warmup {
                    return base * step as f64 / warmup as f64;
                }
                let decays = (step - warmup) / period.max(1);
                base * factor.powi(decays as i32)
            }
            LrSchedule::WarmupCosine { base, warmup, total, floor } => {
                if step < warmup {
                    return base * step as f64 / warmup as f64;
                }
                let span = total.saturating_sub(warmup);
                if span == 0 {
                    return if step >= total { floor } else { base };
                }
                let progress = ((step - warmup) as f64 / span as f64).min(1.0);
                floor + (base - floor) * 0.5 * (1.0 + (PI * progress).cos())
            }
        }
    }

    pub fn base(&self) -> f64 {
        match *self {
            LrSchedule::Constant { rate } => rate,
            LrSchedule::WarmupStepDecay { base, .. } | LrSchedule::WarmupCosine { base, .. } => base,
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            LrSchedule::Constant { rate } => format!("constant rate={rate}"),
            LrSchedule::WarmupStepDecay { base, warmup, factor, period } => {
                format!("warmup-step base={base} warmup={warmup} factor={factor} period={period}")
            }
            LrSchedule::WarmupCosine { base, warmup, total, floor } => {
                format!("warmup-cosine base={base} warmup={warmup} total={total} floor={floor}")
            }
        }
    }
}
