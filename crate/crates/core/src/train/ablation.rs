use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use log::info;

use super::{
    build_stage_plan, evaluate, pretrain_decoder, train_stage, DiffItem, PlanOverrides, Result, TrainError,
    TrainOptions, TrainingData, DEFAULT_CAPTION_RATIO,
};
use crate::audio::{Tagger, TaggerConfig, TaggerTrainConfig};
use crate::decode::DecodeConfig;
use crate::forge::{DifferenceRecord, StubClient};
use crate::metrics::MetricReport;
use crate::model::{Adiff, ModelConfig};
use crate::tensor::{GroupSet, ParamGroup, Tensor};
use crate::text::{PromptDb, Tier, Vocab};
use crate::toy::{self, ToyClip, ToyConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Variant {
    LanguageOnly,
    NoCrossProjection,
    WithCrossProjection,
    Scale(String),
    WithStage3,
    WithoutStage3,
    WithPositionCaptioning,
    WithoutPositionCaptioning,
}

impl Variant {
    pub fn all() -> Vec<Variant> {
        let mut v = vec![Variant::LanguageOnly, Variant::NoCrossProjection, Variant::WithCrossProjection];
        v.extend(["base", "med", "large", "xl"].map(|s| Variant::Scale(s.into())));
        v.extend([
            Variant::WithStage3,
            Variant::WithoutStage3,
            Variant::WithPositionCaptioning,
            Variant::WithoutPositionCaptioning,
        ]);
        v
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::LanguageOnly => f.write_str("language-only"),
            Variant::NoCrossProjection => f.write_str("no-cross-projection"),
            Variant::WithCrossProjection => f.write_str("with-cross-projection"),
            Variant::Scale(s) => write!(f, "scale:{s}"),
            Variant::WithStage3 => f.write_str("with-stage3"),
            Variant::WithoutStage3 => f.write_str("without-stage3"),
            Variant::WithPositionCaptioning => f.write_str("with-position-captioning"),
            Variant::WithoutPositionCaptioning => f.write_str("without-position-captioning"),
        }
    }
}

impl FromStr for Variant {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(scale) = s.strip_prefix("scale:") {
            ModelConfig::scale_layers(scale).map_err(|_| TrainError::Variant(s.to_string()))?;
            return Ok(Variant::Scale(scale.to_string()));
        }
        Variant::all().into_iter().find(|v| v.to_string() == s).ok_or_else(|| TrainError::Variant(s.to_string()))
    }
}

/// Shared training budget; every variant in one comparison uses the same one.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationBudget {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub stage3_epochs: usize,
    pub batch: usize,
    pub caption_ratio: f64,
    pub stage2_lr: Option<f64>,
    pub stage3_lr: Option<f64>,
    pub max_new: usize,
}

impl Default for AblationBudget {
    fn default() -> Self {
        Self {
            stage1_epochs: 5,
            stage2_epochs: 30,
            stage3_epochs: 0,
            batch: 4,
            caption_ratio: DEFAULT_CAPTION_RATIO,
            stage2_lr: None,
            stage3_lr: None,
            max_new: 48,
        }
    }
}

type NamedValues = Vec<(String, Tensor<f32>)>;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train_clips: usize,
    pub test_clips: usize,
    pub toy: ToyConfig,
    pub tier: Tier,
    pub tagger: TaggerConfig,
    pub tagger_train: TaggerTrainConfig,
    pub model: ModelConfig,
    pub vocab_size: usize,
    /// Extra text-only explanations over random class pairs for decoder pretraining.
    pub lm_texts: usize,
    /// Prepend both captions to each pretraining explanation.
    pub lm_with_captions: bool,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let tagger = TaggerConfig { hidden: 32, ..TaggerConfig::default() };
        Self {
            train_clips: 48,
            test_clips: 16,
            toy: ToyConfig::default(),
            tier: Tier::One,
            tagger_train: TaggerTrainConfig { epochs: 40, batch: 8, lr: 3e-3, seed: 0 },
            model: toy_model_config(tagger.hidden),
            tagger,
            vocab_size: 400,
            lm_texts: 2000,
            lm_with_captions: true,
            seed: 0,
        }
    }
}

/// Desk-scale model used by the toy experiments.
pub fn toy_model_config(encoder_dim: usize) -> ModelConfig {
    let mut c = ModelConfig {
        d: 64,
        heads: 4,
        layers: 2,
        vocab: 400,
        audio_prefix: 8,
        text_prefix: 4,
        mapper_depth: 1,
        mapper_const: 2,
        cross_depth: 1,
        cross_const: 2,
        max_len: 0,
        encoder_dim,
        cross_projection: true,
        text_projection: true,
    };
    c.max_len = c.prefix_len() + 40;
    c
}

type DecoderKey = (usize, u64, usize, usize);

/// Toy clips, a pretrained tagger, stub explanations and a vocabulary, shared
/// read-only by every run of an ablation.
#[derive(Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub train_clips: Vec<ToyClip>,
    pub test_clips: Vec<ToyClip>,
    pub tagger: Tagger,
    pub tagger_curve: Vec<f64>,
    pub vocab: Vocab,
    pub train_records: Vec<DifferenceRecord>,
    pub test_records: Vec<DifferenceRecord>,
    pub train_pairs: Vec<(usize, usize)>,
    pub test_pairs: Vec<(usize, usize)>,
    pub lm_corpus: Vec<String>,
    pub prompts: PromptDb,
    /// Stage-1 ψ/θ values keyed by (layers, seed, epochs, batch). Stage 1 never
    /// touches the groups that differ between variants, so reuse is exact.
    decoders: Mutex<HashMap<DecoderKey, NamedValues>>,
}

impl Experiment {
    pub fn build(config: ExperimentConfig) -> Result<Self> {
        let seed = config.seed;
        let train_clips = toy::generate_clips(config.train_clips, "train", &config.toy, seed)?;
        let test_clips = toy::generate_clips(config.test_clips, "test", &config.toy, seed ^ 0x9e37_79b9)?;
        let tagger_train = TaggerTrainConfig { seed, ..config.tagger_train };
        let (tagger, tagger_curve) = toy::pretrain_tagger(&train_clips, config.tagger.clone(), tagger_train)?;
        let client = StubClient::new(seed);
        let prompts = PromptDb::default();
        let train_pairs = toy::sample_pairs(&train_clips, seed + 1)?;
        let test_pairs = toy::sample_pairs(&test_clips, seed + 2)?;
        let train_records = toy::explain_pairs(&train_clips, &train_pairs, config.tier, &client, &prompts, seed + 3)?;
        let test_records = toy::explain_pairs(&test_clips, &test_pairs, config.tier, &client, &prompts, seed + 4)?;
        let lm_corpus = lm_corpus(&config, &client, &prompts)?;
        let mut text: Vec<&str> = lm_corpus.iter().map(String::as_str).collect();
        text.extend(train_records.iter().map(|r| r.explanation.as_str()));
        text.extend(train_clips.iter().map(|c| c.caption.as_str()));
        let vocab = Vocab::train(&text, config.vocab_size)?;
        let mut config = config;
        config.model.vocab = vocab.size();
        Ok(Self {
            config,
            train_clips,
            test_clips,
            tagger,
            tagger_curve,
            vocab,
            train_records,
            test_records,
            train_pairs,
            test_pairs,
            lm_corpus,
            prompts,
            decoders: Mutex::new(HashMap::new()),
        })
    }

    /// Runs (or replays) stage-1 decoder pretraining on `model`.
    pub fn pretrain_decoder(&self, model: &mut Adiff<f32>, seed: u64, budget: &AblationBudget) -> Result<()> {
        let key = (model.config.layers, seed, budget.stage1_epochs, budget.batch);
        let groups = GroupSet::of(&[ParamGroup::Psi, ParamGroup::Theta]);
        if let Some(values) = self.decoders.lock().expect("cache lock").get(&key) {
            model.store.load_values(values.iter().cloned())?;
            model.meta.insert(super::STAGE_KEY.into(), "1".into());
            return Ok(());
        }
        let windows = super::pack_windows(&self.lm_corpus, &self.vocab, model.config.max_len.min(64)).len();
        let o = PlanOverrides { epochs: Some(budget.stage1_epochs), batch: Some(budget.batch), seed: Some(seed), ..Default::default() };
        let plan = build_stage_plan(1, windows.div_ceil(budget.batch.max(1)), &o)?;
        pretrain_decoder(model, &plan, &self.lm_corpus, &self.vocab, &TrainOptions::default())?;
        let values = model.store.ids_in(groups).into_iter().map(|id| (model.store.get(id).name.clone(), model.store.value(id).clone())).collect();
        self.decoders.lock().expect("cache lock").insert(key, values);
        Ok(())
    }

    /// Embeds `clips` through the model's encoder and attaches the records.
    pub fn data(&self, model: &Adiff<f32>, clips: &[ToyClip], pairs: &[(usize, usize)], records: &[DifferenceRecord]) -> Result<TrainingData> {
        let embeddings = clips.iter().map(|c| model.embed_audio(&c.mel)).collect::<std::result::Result<Vec<_>, _>>()?;
        let diffs = pairs
            .iter()
            .zip(records)
            .map(|(&(a, b), r)| DiffItem { audio1: a, audio2: b, prompt: r.prompt.clone(), target: r.explanation.clone() })
            .collect();
        Ok(TrainingData { embeddings, captions: clips.iter().map(|c| c.caption.clone()).collect(), diffs, prompts: self.prompts.clone() })
    }

    pub fn train_data(&self, model: &Adiff<f32>) -> Result<TrainingData> {
        self.data(model, &self.train_clips, &self.train_pairs, &self.train_records)
    }

    pub fn test_data(&self, model: &Adiff<f32>) -> Result<TrainingData> {
        self.data(model, &self.test_clips, &self.test_pairs, &self.test_records)
    }

    /// Fresh model; `pretrained` loads the toy tagger into φ, otherwise φ stays random.
    pub fn model(&self, config: ModelConfig, pretrained: bool, seed: u64) -> Result<Adiff<f32>> {
        let mut model = Adiff::<f32>::new(config, self.config.tagger.clone(), seed)?;
        if pretrained {
            model.load_tagger(&self.tagger)?;
        }
        Ok(model)
    }
}

fn lm_corpus(config: &ExperimentConfig, client: &StubClient, prompts: &PromptDb) -> Result<Vec<String>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed + 5);
    let extractor_free = |classes: Vec<String>, id: String| crate::forge::CaptionRow {
        audio: id,
        caption: toy::caption(&classes),
        split: "lm".into(),
    };
    let mut out = Vec::with_capacity(config.lm_texts);
    for i in 0..config.lm_texts {
        let k1 = rng.random_range(1..=config.toy.max_events.max(1));
        let k2 = rng.random_range(1..=config.toy.max_events.max(1));
        let a = extractor_free(toy::random_classes(&config.toy, k1, &mut rng), format!("lm{i}a"));
        let b = extractor_free(toy::random_classes(&config.toy, k2, &mut rng), format!("lm{i}b"));
        let rec = crate::forge::generate_explanation(&a, &b, config.tier, client, prompts, rng.random())?;
        out.push(if config.lm_with_captions {
            format!("{}. {}. {}", a.caption, b.caption, rec.explanation)
        } else {
            rec.explanation
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub report: MetricReport,
    pub exact: usize,
    pub final_train_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub variant: Variant,
    pub per_seed: Vec<SeedResult>,
    pub mean: MetricReport,
}

/// Field-wise mean of several reports.
pub fn mean_report(reports: &[MetricReport]) -> Option<MetricReport> {
    let n = reports.len();
    if n == 0 {
        return None;
    }
    let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n as f64;
    let spice = if reports.iter().all(|r| r.spice.is_some()) {
        Some(reports.iter().filter_map(|r| r.spice).sum::<f64>() / n as f64)
    } else {
        None
    };
    Some(MetricReport {
        bleu1: avg(|r| r.bleu1),
        bleu2: avg(|r| r.bleu2),
        bleu3: avg(|r| r.bleu3),
        bleu4: avg(|r| r.bleu4),
        meteor: avg(|r| r.meteor),
        rouge_l: avg(|r| r.rouge_l),
        cider: avg(|r| r.cider),
        spider: avg(|r| r.spider),
        spice_missing: spice.is_none(),
        spice,
        meteor_lite: reports.iter().any(|r| r.meteor_lite),
        idf_degenerate: reports.iter().any(|r| r.idf_degenerate),
    })
}

struct RunSpec {
    model: ModelConfig,
    pretrained_encoder: bool,
    stage3_epochs: usize,
    caption_ratio: f64,
}

fn spec_for(variant: &Variant, exp: &Experiment, budget: &AblationBudget) -> Result<RunSpec> {
    let mut spec = RunSpec {
        model: exp.config.model.clone(),
        pretrained_encoder: true,
        stage3_epochs: budget.stage3_epochs,
        caption_ratio: budget.caption_ratio,
    };
    match variant {
        Variant::LanguageOnly => spec.pretrained_encoder = false,
        Variant::NoCrossProjection => spec.model.cross_projection = false,
        Variant::WithCrossProjection => spec.model.cross_projection = true,
        Variant::Scale(name) => {
            spec.model.layers = ModelConfig::scale_layers(name).map_err(|_| TrainError::Variant(variant.to_string()))?
        }
        Variant::WithStage3 => spec.stage3_epochs = budget.stage3_epochs.max(1),
        Variant::WithoutStage3 => spec.stage3_epochs = 0,
        Variant::WithPositionCaptioning => {
            if spec.caption_ratio == 0.0 {
                spec.caption_ratio = DEFAULT_CAPTION_RATIO;
            }
        }
        Variant::WithoutPositionCaptioning => spec.caption_ratio = 0.0,
    }
    Ok(spec)
}

/// Trains one model for `variant` and `seed` through stages 1 to 3 and scores it on
/// the held-out pairs.
pub fn run_variant_seed(variant: &Variant, exp: &Experiment, seed: u64, budget: &AblationBudget) -> Result<SeedResult> {
    let spec = spec_for(variant, exp, budget)?;
    let mut model = exp.model(spec.model, spec.pretrained_encoder, seed)?;
    let train = exp.train_data(&model)?;
    let test = exp.test_data(&model)?;
    let opts = TrainOptions::default();
    if budget.stage1_epochs > 0 {
        exp.pretrain_decoder(&mut model, seed, budget)?;
    }
    let steps = train.epoch_len(spec.caption_ratio).div_ceil(budget.batch.max(1));
    let o2 = PlanOverrides {
        epochs: Some(budget.stage2_epochs),
        batch: Some(budget.batch),
        seed: Some(seed),
        caption_ratio: Some(spec.caption_ratio),
        base_lr: budget.stage2_lr,
        ..Default::default()
    };
    let mut last = train_stage(&mut model, &build_stage_plan(2, steps, &o2)?, &train, &exp.vocab, &opts)?;
    if spec.stage3_epochs > 0 {
        let o3 = PlanOverrides { epochs: Some(spec.stage3_epochs), base_lr: budget.stage3_lr, ..o2 };
        last = train_stage(&mut model, &build_stage_plan(3, steps, &o3)?, &train, &exp.vocab, &opts)?;
    }
    let eval = evaluate(&model, &test, &exp.vocab, &DecodeConfig::greedy(budget.max_new))?;
    info!("{variant} seed {seed}: {}", eval.report.summary());
    Ok(SeedResult { seed, report: eval.report, exact: eval.exact, final_train_loss: last.last_epoch_loss() })
}

pub fn run_ablation(variant: &Variant, exp: &Experiment, seeds: &[u64], budget: &AblationBudget) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(TrainError::Plan("no seeds".into()));
    }
    let per_seed = seeds.iter().map(|&s| run_variant_seed(variant, exp, s, budget)).collect::<Result<Vec<_>>>()?;
    let mean = mean_report(&per_seed.iter().map(|r| r.report.clone()).collect::<Vec<_>>()).expect("non-empty");
    Ok(AblationReport { variant: variant.clone(), per_seed, mean })
}
