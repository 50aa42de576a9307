use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use adiff_core::audio::{load_wav, write_wav, MelConfig, MelExtractor, MelSpec, Tagger, TaggerConfig, TaggerTrainConfig};
use adiff_core::decode::{DecodeConfig, DecodeMode};
use adiff_core::forge::{
    corpus_entropy, flatten_captions, generate_dataset, hallucination_report, read_records, write_records,
    CaptionRow, DifferenceRecord, EntropyLevel, HttpClient, LlmClient, StubClient,
};
use adiff_core::metrics::{corpus_stats, EvalPair, MetricReport, NoSpice};
use adiff_core::model::{load_model, save_model, Adiff};
use adiff_core::text::{PromptDb, PromptKind, Tier, Vocab};
use adiff_core::toy::{self, ToyConfig};
use adiff_core::train::{
    build_stage_plan, generate_text, pretrain_decoder, run_ablation, toy_model_config, train_stage, AblationBudget,
    DiffItem, Experiment, ExperimentConfig, PlanOverrides, TrainOptions, TrainingData, Variant,
};
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::service::{self, Service};

pub const MODEL_DIR: &str = "model";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const TAGGER_FILE: &str = "tagger.bin";
pub const CAPTIONS_FILE: &str = "captions.csv";
pub const LABELS_FILE: &str = "labels.csv";

#[derive(Debug, Parser)]
#[command(name = "adiff", version, about = "Audio difference explanation toolkit")]
pub struct Cli {
    /// Seed for every random choice in the command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate difference explanations from captions, or a synthetic toy corpus.
    MakeDataset(MakeDatasetArgs),
    /// Stage 1: train the toy tagger and pretrain the decoder on explanation text.
    Pretrain(PretrainArgs),
    /// Stage 2 or 3 training on a data directory.
    Train(TrainArgs),
    /// Explain the difference between two WAV files.
    Generate(GenerateArgs),
    /// Score predictions against references; CSV on standard output.
    Evaluate(EvaluateArgs),
    /// Run ablation variants on the synthetic toy world.
    Ablate(AblateArgs),
    /// Corpus statistics and entropy, or a hallucination audit of one explanation.
    Analyze(AnalyzeArgs),
    /// Serve the annotation API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LlmChoice {
    /// Deterministic templated client; no network.
    Stub,
    /// OpenAI-compatible endpoint from ADIFF_LLM_BASE_URL / ADIFF_LLM_MODEL / ADIFF_LLM_API_KEY.
    Http,
}

#[derive(Debug, Args)]
pub struct MakeDatasetArgs {
    /// Render this many synthetic clips into `--out` (a directory).
    #[arg(long, conflicts_with = "captions")]
    pub toy: Option<usize>,
    /// Caption CSV with `file_name` and `caption` or `caption_N` columns.
    #[arg(long, required_unless_present = "toy")]
    pub captions: Option<PathBuf>,
    /// Output directory (toy) or JSONL file (captions).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub tiers: Vec<Tier>,
    #[arg(long, value_enum, default_value_t = LlmChoice::Stub)]
    pub llm: LlmChoice,
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Events per toy clip are drawn from 1..=max-events.
    #[arg(long, default_value_t = 1)]
    pub max_events: usize,
    #[arg(long, default_value_t = 1.0)]
    pub seconds: f64,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Data directory written by `make-dataset --toy`.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory receiving the model, vocabulary and tagger.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub tagger_epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub decoder_epochs: usize,
    #[arg(long, default_value_t = 400)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    /// Skip fitting the tagger and keep a random encoder.
    #[arg(long)]
    pub random_encoder: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub stage: u8,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Position-caption mixing ratio.
    #[arg(long)]
    pub ratio: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Run directory holding `model/` and `vocab.txt`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub audio1: PathBuf,
    #[arg(long)]
    pub audio2: PathBuf,
    #[arg(long, default_value = "1")]
    pub tier: Tier,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 0.8)]
    pub p: f64,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 64)]
    pub max_new: usize,
    #[arg(long)]
    pub greedy: bool,
    /// Prompt text; sampled from the tier's prompt list when absent.
    #[arg(long)]
    pub prompt: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// JSONL lines `{"id": .., "text": ..}`.
    #[arg(long)]
    pub pred: PathBuf,
    /// JSONL lines `{"id": .., "references": [..]}` or `{"id": .., "text": ..}`.
    #[arg(long)]
    pub r#ref: PathBuf,
    #[arg(long, default_value = "run")]
    pub label: String,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_delimiter = ',', default_value = "language-only,with-cross-projection")]
    pub variants: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 48)]
    pub train_clips: usize,
    #[arg(long, default_value_t = 16)]
    pub test_clips: usize,
    #[arg(long, default_value_t = 2000)]
    pub lm_texts: usize,
    #[arg(long, default_value_t = 5)]
    pub stage1_epochs: usize,
    #[arg(long, default_value_t = 30)]
    pub stage2_epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub stage3_epochs: usize,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.25)]
    pub ratio: f64,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Difference records (JSONL) for per-tier statistics and entropy.
    #[arg(long, required_unless_present = "text")]
    pub records: Option<PathBuf>,
    /// Explanation to audit against the tagger timelines of two clips.
    #[arg(long, requires_all = ["model", "audio1", "audio2"])]
    pub text: Option<String>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub audio1: Option<PathBuf>,
    #[arg(long)]
    pub audio2: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Store directory with items.jsonl and audio/.
    #[arg(long, env = "ADIFF_STORE")]
    pub store: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
}

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::MakeDataset(a) => make_dataset(a, seed),
        Command::Pretrain(a) => pretrain(a, seed),
        Command::Train(a) => train(a, seed),
        Command::Generate(a) => generate(a, seed),
        Command::Evaluate(a) => evaluate(a),
        Command::Ablate(a) => ablate(a, seed),
        Command::Analyze(a) => analyze(a),
        Command::Serve(a) => serve(a),
    }
}

fn llm_client(choice: LlmChoice, seed: u64) -> Result<Box<dyn LlmClient>> {
    Ok(match choice {
        LlmChoice::Stub => Box::new(StubClient::new(seed)),
        LlmChoice::Http => Box::new(HttpClient::from_env()?),
    })
}

fn make_dataset(a: MakeDatasetArgs, seed: u64) -> Result<()> {
    let client = llm_client(a.llm, seed)?;
    let prompts = PromptDb::default();
    let Some(n) = a.toy else {
        let path = a.captions.expect("required by clap");
        let flat = flatten_captions(File::open(&path).with_context(|| format!("opening {}", path.display()))?, &a.split)?;
        let records = generate_dataset(&flat.rows, &a.tiers, client.as_ref(), &prompts, seed)?;
        write_records(BufWriter::new(File::create(&a.out)?), &records)?;
        eprintln!("{} records from {} captions ({} rejected)", records.len(), flat.rows.len(), flat.rejected);
        return Ok(());
    };
    let cfg = ToyConfig { max_events: a.max_events, seconds: a.seconds, ..ToyConfig::default() };
    let clips = toy::generate_clips(n, "toy", &cfg, seed)?;
    let audio_dir = a.out.join(service::AUDIO_DIR);
    fs::create_dir_all(&audio_dir)?;
    let mut captions = csv::Writer::from_path(a.out.join(CAPTIONS_FILE))?;
    captions.write_record(["file_name", "caption"])?;
    let mut labels = csv::Writer::from_path(a.out.join(LABELS_FILE))?;
    labels.write_record(["file_name", "classes"])?;
    let mut rows = Vec::with_capacity(clips.len());
    for c in &clips {
        let name = format!("{}.wav", c.id);
        write_wav(audio_dir.join(&name), &c.audio)?;
        captions.write_record([name.as_str(), c.caption.as_str()])?;
        labels.write_record([name.as_str(), c.classes.join(" ").as_str()])?;
        rows.push(CaptionRow { audio: name, caption: c.caption.clone(), split: "toy".into() });
    }
    captions.flush()?;
    labels.flush()?;
    let records = generate_dataset(&rows, &a.tiers, client.as_ref(), &prompts, seed)?;
    write_records(BufWriter::new(File::create(a.out.join(service::ITEMS_FILE))?), &records)?;
    eprintln!("{} clips and {} records in {}", clips.len(), records.len(), a.out.display());
    Ok(())
}

/// Clip names with their captions, in file order.
fn read_captions(dir: &Path) -> Result<Vec<(String, String)>> {
    let path = dir.join(CAPTIONS_FILE);
    let flat = flatten_captions(File::open(&path).with_context(|| format!("opening {}", path.display()))?, "data")?;
    let mut out: Vec<(String, String)> = Vec::new();
    for row in flat.rows {
        if !out.iter().any(|(a, _)| *a == row.audio) {
            out.push((row.audio, row.caption));
        }
    }
    Ok(out)
}

fn audio_path(dir: &Path, name: &str) -> PathBuf {
    let direct = dir.join(service::AUDIO_DIR).join(name);
    if direct.is_file() {
        direct
    } else {
        dir.join(service::AUDIO_DIR).join(format!("{name}.wav"))
    }
}

fn mel_of(path: &Path) -> Result<MelSpec> {
    let clip = load_wav(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(MelExtractor::new(MelConfig::default()).extract(&clip)?)
}

fn read_items(dir: &Path) -> Result<Vec<DifferenceRecord>> {
    let path = dir.join(service::ITEMS_FILE);
    Ok(read_records(BufReader::new(File::open(&path).with_context(|| format!("opening {}", path.display()))?))?)
}

fn pretrain(a: PretrainArgs, seed: u64) -> Result<()> {
    let captions: HashMap<String, String> = read_captions(&a.data)?.into_iter().collect();
    let mut rdr = csv::Reader::from_path(a.data.join(LABELS_FILE))?;
    let mut labelled = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let name = rec.get(0).unwrap_or("").to_string();
        let classes: Vec<String> = rec.get(1).unwrap_or("").split_whitespace().map(str::to_string).collect();
        labelled.push((mel_of(&audio_path(&a.data, &name))?, classes));
    }
    let tagger_cfg = TaggerConfig { hidden: 32, ..TaggerConfig::default() };
    let mut tagger = Tagger::new(tagger_cfg.clone(), seed);
    if !a.random_encoder {
        let mels: Vec<MelSpec> = labelled.iter().map(|(m, _)| m.clone()).collect();
        tagger.fit_normalization(&mels);
        let data: Vec<(MelSpec, Vec<f64>)> = labelled
            .iter()
            .map(|(m, cls)| (m.clone(), tagger.classes().iter().map(|c| if cls.contains(c) { 1.0 } else { 0.0 }).collect()))
            .collect();
        let curve = tagger.train(&data, TaggerTrainConfig { epochs: a.tagger_epochs, batch: 8, lr: 3e-3, seed })?;
        eprintln!("tagger loss {:.4} -> {:.4}", curve.first().unwrap_or(&f64::NAN), curve.last().unwrap_or(&f64::NAN));
    }
    let records = read_items(&a.data)?;
    let corpus: Vec<String> = records
        .iter()
        .map(|r| match (captions.get(&r.audio1), captions.get(&r.audio2)) {
            (Some(c1), Some(c2)) => format!("{c1}. {c2}. {}", r.explanation),
            _ => r.explanation.clone(),
        })
        .collect();
    let mut text: Vec<&str> = corpus.iter().map(String::as_str).collect();
    text.extend(captions.values().map(String::as_str));
    let vocab = Vocab::train(&text, a.vocab_size)?;
    let mut cfg = toy_model_config(tagger_cfg.hidden);
    cfg.vocab = vocab.size();
    let mut model = Adiff::<f32>::new(cfg, tagger_cfg, seed)?;
    model.load_tagger(&tagger)?;
    if a.decoder_epochs > 0 {
        let windows = adiff_core::train::pack_windows(&corpus, &vocab, model.config.max_len.min(64)).len();
        let o = PlanOverrides { epochs: Some(a.decoder_epochs), batch: Some(a.batch), seed: Some(seed), ..Default::default() };
        let plan = build_stage_plan(1, windows.div_ceil(a.batch.max(1)), &o)?;
        let out = pretrain_decoder(&mut model, &plan, &corpus, &vocab, &TrainOptions { out_dir: Some(a.out.join("stage1")) })?;
        eprintln!("decoder loss per epoch {:?}", out.epoch_losses);
    }
    fs::create_dir_all(&a.out)?;
    save_model(&model, a.out.join(MODEL_DIR))?;
    fs::write(a.out.join(VOCAB_FILE), vocab.to_text())?;
    tagger.save(a.out.join(TAGGER_FILE))?;
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

fn load_run(dir: &Path) -> Result<(Adiff<f32>, Vocab)> {
    let model = load_model::<f32>(dir.join(MODEL_DIR)).with_context(|| format!("loading model from {}", dir.display()))?;
    let vocab_path = dir.join(VOCAB_FILE);
    let vocab = Vocab::from_text(&fs::read_to_string(&vocab_path).with_context(|| format!("reading {}", vocab_path.display()))?)?;
    if vocab.size() != model.config.vocab {
        bail!("vocabulary of {} does not match model vocabulary {}", vocab.size(), model.config.vocab);
    }
    Ok((model, vocab))
}

fn training_data(model: &Adiff<f32>, dir: &Path) -> Result<TrainingData> {
    let clips = read_captions(dir)?;
    let index: HashMap<&str, usize> = clips.iter().enumerate().map(|(i, (a, _))| (a.as_str(), i)).collect();
    let embeddings = clips
        .iter()
        .map(|(name, _)| Ok(model.embed_audio(&mel_of(&audio_path(dir, name))?)?))
        .collect::<Result<Vec<_>>>()?;
    let mut diffs = Vec::new();
    for r in read_items(dir)? {
        let find = |a: &str| index.get(a).copied().ok_or_else(|| anyhow!("record refers to unknown audio {a:?}"));
        diffs.push(DiffItem { audio1: find(&r.audio1)?, audio2: find(&r.audio2)?, prompt: r.prompt, target: r.explanation });
    }
    Ok(TrainingData { embeddings, captions: clips.into_iter().map(|(_, c)| c).collect(), diffs, prompts: PromptDb::default() })
}

fn train(a: TrainArgs, seed: u64) -> Result<()> {
    let (mut model, vocab) = load_run(&a.run)?;
    let data = training_data(&model, &a.data)?;
    let o = PlanOverrides {
        epochs: a.epochs,
        base_lr: a.lr,
        batch: a.batch,
        seed: Some(seed),
        caption_ratio: a.ratio,
        ..Default::default()
    };
    let ratio = a.ratio.unwrap_or(adiff_core::train::DEFAULT_CAPTION_RATIO);
    let batch = a.batch.unwrap_or(4).max(1);
    let plan = build_stage_plan(a.stage, data.epoch_len(ratio).div_ceil(batch), &o)?;
    let out_dir = a.run.join(format!("stage{}", a.stage));
    let out = train_stage(&mut model, &plan, &data, &vocab, &TrainOptions { out_dir: Some(out_dir.clone()) })?;
    save_model(&model, a.run.join(MODEL_DIR))?;
    eprintln!(
        "stage {}: {} updates, loss {:.4} -> {:.4}; artifacts in {}",
        a.stage,
        out.losses.len(),
        out.first_loss().unwrap_or(f64::NAN),
        out.last_epoch_loss().unwrap_or(f64::NAN),
        out_dir.display()
    );
    Ok(())
}

fn generate(a: GenerateArgs, seed: u64) -> Result<()> {
    let weights = a.model.join(MODEL_DIR).join("model.bin");
    if !weights.is_file() {
        bail!("no checkpoint at {}", weights.display());
    }
    let (model, vocab) = load_run(&a.model)?;
    let e1 = model.embed_audio(&mel_of(&a.audio1)?)?;
    let e2 = model.embed_audio(&mel_of(&a.audio2)?)?;
    let prompt = match a.prompt {
        Some(p) => p,
        None => PromptDb::default().sample(PromptKind::Tier(a.tier), &mut ChaCha8Rng::seed_from_u64(seed))?.to_string(),
    };
    let cfg = DecodeConfig {
        mode: if a.greedy { DecodeMode::Greedy } else { DecodeMode::TopKTopP },
        k: a.k,
        p: a.p,
        temperature: a.temperature,
        max_new: a.max_new,
        seed,
        ..DecodeConfig::default()
    };
    cfg.validate()?;
    let text = generate_text(&model, &vocab, &e1, &e2, &prompt, &cfg)?;
    println!("{text}");
    Ok(())
}

#[derive(Deserialize)]
struct PredLine {
    id: String,
    text: String,
}

#[derive(Deserialize)]
struct RefLine {
    id: String,
    #[serde(default)]
    references: Vec<String>,
    #[serde(default)]
    text: Option<String>,
}

fn jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?);
    }
    Ok(out)
}

/// Pairs predictions with references by id.
pub fn eval_pairs(preds: &Path, refs: &Path) -> Result<Vec<EvalPair>> {
    let mut by_id: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in jsonl::<RefLine>(refs)? {
        let entry = by_id.entry(r.id).or_default();
        entry.extend(r.references);
        entry.extend(r.text);
    }
    jsonl::<PredLine>(preds)?
        .into_iter()
        .map(|p| match by_id.get(&p.id) {
            Some(r) if !r.is_empty() => Ok(EvalPair::from_text(&p.text, r)),
            _ => Err(anyhow!("no reference for prediction {:?}", p.id)),
        })
        .collect()
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let pairs = eval_pairs(&a.pred, &a.r#ref)?;
    if pairs.is_empty() {
        bail!("no predictions in {}", a.pred.display());
    }
    let report = MetricReport::compute(&pairs, &NoSpice);
    MetricReport::write_csv(std::io::stdout().lock(), &[(a.label, report)])?;
    Ok(())
}

fn ablate(a: AblateArgs, seed: u64) -> Result<()> {
    let variants = a.variants.iter().map(|v| v.parse::<Variant>()).collect::<Result<Vec<_>, _>>()?;
    let cfg = ExperimentConfig {
        train_clips: a.train_clips,
        test_clips: a.test_clips,
        lm_texts: a.lm_texts,
        seed,
        ..ExperimentConfig::default()
    };
    let exp = Experiment::build(cfg)?;
    let budget = AblationBudget {
        stage1_epochs: a.stage1_epochs,
        stage2_epochs: a.stage2_epochs,
        stage3_epochs: a.stage3_epochs,
        batch: a.batch,
        caption_ratio: a.ratio,
        ..AblationBudget::default()
    };
    let mut rows = Vec::new();
    for v in &variants {
        let report = run_ablation(v, &exp, &a.seeds, &budget)?;
        for s in &report.per_seed {
            rows.push((format!("{v}/seed{}", s.seed), s.report.clone()));
        }
        eprintln!("{v}: {}", report.mean.summary());
        rows.push((format!("{v}/mean"), report.mean));
    }
    match a.out {
        Some(p) => MetricReport::write_csv(File::create(p)?, &rows)?,
        None => MetricReport::write_csv(std::io::stdout().lock(), &rows)?,
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    if let Some(path) = &a.records {
        let records = read_records(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))?;
        let mut by_tier: BTreeMap<Tier, Vec<&str>> = BTreeMap::new();
        for r in &records {
            by_tier.entry(r.tier).or_default().push(&r.explanation);
        }
        let mut out = std::io::stdout().lock();
        writeln!(out, "tier,count,median_len,max_len,vocab,char_entropy,word_entropy")?;
        for (tier, texts) in by_tier {
            let s = corpus_stats(&texts).ok_or_else(|| anyhow!("tier {tier} has no text"))?;
            let hc = corpus_entropy(&texts, EntropyLevel::Character)?;
            let hw = corpus_entropy(&texts, EntropyLevel::Word)?;
            writeln!(out, "{tier},{},{},{},{},{hc:.4},{hw:.4}", s.count, s.median_len, s.max_len, s.vocab)?;
        }
    }
    if let Some(text) = &a.text {
        let run = a.model.as_ref().expect("required by clap");
        let tagger = Tagger::load(run.join(TAGGER_FILE)).with_context(|| format!("loading tagger from {}", run.display()))?;
        let t1 = tagger.tag_events(&mel_of(a.audio1.as_ref().expect("required by clap"))?)?;
        let t2 = tagger.tag_events(&mel_of(a.audio2.as_ref().expect("required by clap"))?)?;
        let report = hallucination_report(text, &t1, &t2, a.top);
        println!("{}", serde_json::to_string_pretty(&report)?);
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let svc = Arc::new(Service::open(&a.store)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&a.addr).await.with_context(|| format!("binding {}", a.addr))?;
        eprintln!("serving {} on http://{}", a.store.display(), listener.local_addr()?);
        axum::serve(listener, service::router(svc)).await?;
        Ok::<_, anyhow::Error>(())
    })
}
