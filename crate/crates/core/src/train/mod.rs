//! Staged training with freezing, position-caption mixing, evaluation and the
//! ablation runner.

mod ablation;
mod data;
mod eval;
mod plan;

pub use ablation::{
    mean_report, run_ablation, run_variant_seed, toy_model_config, AblationBudget, AblationReport, Experiment, ExperimentConfig,
    SeedResult, Variant,
};
pub use data::{mix_position_captioning, DiffItem, Position, StreamItem, TrainingData, TrainingStream};
pub use eval::{evaluate, exact_match_count, generate, generate_text, Evaluation};
pub use plan::{build_stage_plan, PlanOverrides, StagePlan, DEFAULT_CAPTION_RATIO};

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::decode::DecodeError;
use crate::forge::ForgeError;
use crate::model::{save_model, Adiff, ModelError};
use crate::tensor::{adam_step, AdamConfig, Graph, OptimizerState, TensorError};
use crate::text::{TextError, Vocab, EOT_ID};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid stage {0}; expected 1, 2 or 3")]
    Stage(u8),
    #[error("mixing ratio {0} outside [0, 1]")]
    Ratio(f64),
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("training data: {0}")]
    Data(String),
    #[error("stage {stage} requires a completed stage {needed} (model records {found:?})")]
    StageOrder { stage: u8, needed: u8, found: Option<String> },
    #[error("stage {stage} diverged at update {step}: loss {loss}, gradient norm {grad_norm}, lr {lr}")]
    Diverged { stage: u8, step: usize, loss: f64, grad_norm: f64, lr: f64 },
    #[error("frozen parameter {0} changed during training")]
    FrozenChanged(String),
    #[error("unknown ablation variant {0:?}")]
    Variant(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Forge(#[from] ForgeError),
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

pub const STAGE_KEY: &str = "stage";

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Directory receiving the checkpoint, loss CSV and manifest.
    pub out_dir: Option<PathBuf>,
}

/// Per-update loss curve of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: u8,
    pub losses: Vec<f64>,
    pub lrs: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

impl StageOutcome {
    pub fn first_loss(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn last_epoch_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }

    pub fn loss_csv(&self) -> String {
        let mut s = String::from("step,loss,lr\n");
        for (i, (l, r)) in self.losses.iter().zip(&self.lrs).enumerate() {
            let _ = writeln!(s, "{},{l},{r}", i + 1);
        }
        s
    }
}

fn recorded_stage<S: crate::tensor::Scalar>(model: &Adiff<S>) -> Option<u8> {
    model.meta.get(STAGE_KEY).and_then(|s| s.parse().ok())
}

/// Runs the difference/caption objective for stage 2 or 3.
pub fn train_stage(model: &mut Adiff<f32>, plan: &StagePlan, data: &TrainingData, vocab: &Vocab, opts: &TrainOptions) -> Result<StageOutcome> {
    plan.validate()?;
    data.validate()?;
    if plan.stage == 1 {
        return Err(TrainError::Plan("stage 1 is language-model pretraining; use pretrain_decoder".into()));
    }
    if plan.stage == 3 && recorded_stage(model).is_none_or(|s| s < 2) {
        return Err(TrainError::StageOrder { stage: 3, needed: 2, found: model.meta.get(STAGE_KEY).cloned() });
    }
    let epoch_len = data.epoch_len(plan.caption_ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut batches = Vec::with_capacity(plan.epochs);
    for _ in 0..plan.epochs {
        let stream = mix_position_captioning(data, plan.caption_ratio, epoch_len, &mut rng)?;
        batches.push(
            stream
                .items
                .chunks(plan.batch)
                .map(|c| c.iter().map(|it| data.example(it, model, vocab)).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        );
    }
    run_updates(model, plan, batches, opts, |m, g, batch| Ok(m.sequence_loss(g, batch)?))
}

/// Stage 1: next-token pretraining of ψ and θ on packed windows of `corpus`.
pub fn pretrain_decoder(model: &mut Adiff<f32>, plan: &StagePlan, corpus: &[String], vocab: &Vocab, opts: &TrainOptions) -> Result<StageOutcome> {
    plan.validate()?;
    if plan.stage != 1 {
        return Err(TrainError::Plan(format!("decoder pretraining runs as stage 1, got {}", plan.stage)));
    }
    let windows = pack_windows(corpus, vocab, model.config.max_len.min(64));
    if windows.is_empty() {
        return Err(TrainError::Data("empty pretraining corpus".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut batches = Vec::with_capacity(plan.epochs);
    for _ in 0..plan.epochs {
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut rng);
        batches.push(order.chunks(plan.batch).map(|c| c.iter().map(|&i| windows[i].clone()).collect::<Vec<_>>()).collect::<Vec<_>>());
    }
    run_updates(model, plan, batches, opts, |m: &Adiff<f32>, g: &mut Graph<f32>, batch: &Vec<Vec<u32>>| {
        let mut total = None;
        for w in batch {
            let logits = m.decode_logits(g, None, &w[..w.len() - 1])?;
            let idx: Vec<usize> = w[1..].iter().map(|&t| t as usize).collect();
            let ce = g.cross_entropy(logits, &idx)?;
            let ce = g.scale(ce, 1.0 / idx.len() as f64);
            total = Some(match total {
                Some(t) => g.add(t, ce)?,
                None => ce,
            });
        }
        Ok(g.scale(total.expect("non-empty batch"), 1.0 / batch.len() as f64))
    })
}

/// Token stream `text EOT text EOT ...` cut into windows of `len` (the last may be shorter).
pub fn pack_windows(corpus: &[String], vocab: &Vocab, len: usize) -> Vec<Vec<u32>> {
    let mut stream = Vec::new();
    for text in corpus {
        stream.extend(vocab.encode(text));
        stream.push(EOT_ID);
    }
    stream.chunks(len.max(2)).filter(|w| w.len() >= 2).map(<[u32]>::to_vec).collect()
}

fn run_updates<B>(
    model: &mut Adiff<f32>,
    plan: &StagePlan,
    epochs: Vec<Vec<B>>,
    opts: &TrainOptions,
    loss_fn: impl Fn(&Adiff<f32>, &mut Graph<f32>, &B) -> Result<crate::tensor::Var>,
) -> Result<StageOutcome> {
    let frozen = plan.trainable.complement();
    let before = model.store.fingerprint(frozen);
    let mut state = OptimizerState::<f32>::new(AdamConfig::default());
    let mut out = StageOutcome { stage: plan.stage, losses: Vec::new(), lrs: Vec::new(), epoch_losses: Vec::new() };
    let mut step = 0usize;
    for (epoch, batches) in epochs.iter().enumerate() {
        let mut sum = 0.0;
        for batch in batches {
            step += 1;
            let lr = plan.lr_for_update(step);
            let (loss, mut grads) = {
                let mut g = Graph::with_params(&model.store, plan.trainable);
                let l = loss_fn(model, &mut g, batch)?;
                (g.value(l).item() as f64, g.backward(l)?)
            };
            let grad_norm = match plan.clip_norm {
                Some(c) => grads.clip_norm(c),
                None => grads.norm(),
            };
            if !loss.is_finite() || !grad_norm.is_finite() {
                return Err(TrainError::Diverged { stage: plan.stage, step, loss, grad_norm, lr });
            }
            adam_step(&mut model.store, &grads, &mut state, lr)?;
            out.losses.push(loss);
            out.lrs.push(lr);
            sum += loss;
        }
        let mean = sum / batches.len().max(1) as f64;
        debug!("stage {} epoch {} mean loss {mean:.4}", plan.stage, epoch + 1);
        out.epoch_losses.push(mean);
    }
    let after = model.store.fingerprint(frozen);
    if let Some(((name, _), _)) = before.iter().zip(&after).find(|(a, b)| a != b) {
        return Err(TrainError::FrozenChanged(name.clone()));
    }
    model.meta.insert(STAGE_KEY.into(), plan.stage.to_string());
    info!("stage {} done: {step} updates, final epoch loss {:?}", plan.stage, out.last_epoch_loss());
    if let Some(dir) = &opts.out_dir {
        write_artifacts(model, plan, &out, dir)?;
    }
    Ok(out)
}

fn write_artifacts(model: &Adiff<f32>, plan: &StagePlan, out: &StageOutcome, dir: &std::path::Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_model(model, dir.join("checkpoint"))?;
    fs::write(dir.join("loss.csv"), out.loss_csv())?;
    let mut manifest = plan.manifest("plan");
    let _ = writeln!(manifest, "updates = {}", out.losses.len());
    if let Some(l) = out.last_epoch_loss() {
        let _ = writeln!(manifest, "final_epoch_loss = {l}");
    }
    fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}
