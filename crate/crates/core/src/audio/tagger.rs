use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AudioError, MelSpec, Result};
use crate::layers::Linear;
use crate::tensor::{
    adam_step, read_checkpoint, write_checkpoint, AdamConfig, Graph, GroupSet, OptimizerState, ParamGroup,
    ParamId, ParamStore, Scalar, Tensor, Var,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerConfig {
    pub mels: usize,
    pub hidden: usize,
    pub classes: Vec<String>,
    /// Frames pooled into one timeline step.
    pub window: usize,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        Self {
            mels: 64,
            hidden: 64,
            classes: super::synth::DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
            window: 10,
        }
    }
}

impl TaggerConfig {
    pub(crate) fn header(&self) -> String {
        format!(
            "# tagger mels={} hidden={} window={} classes={}\n",
            self.mels,
            self.hidden,
            self.window,
            self.classes.join(",")
        )
    }

    pub(crate) fn parse_header(text: &str) -> Option<Self> {
        let line = text.lines().find_map(|l| l.strip_prefix("# tagger "))?;
        let mut cfg = TaggerConfig { mels: 0, hidden: 0, classes: Vec::new(), window: 0 };
        for kv in line.split_whitespace() {
            let (k, v) = kv.split_once('=')?;
            match k {
                "mels" => cfg.mels = v.parse().ok()?,
                "hidden" => cfg.hidden = v.parse().ok()?,
                "window" => cfg.window = v.parse().ok()?,
                "classes" => cfg.classes = v.split(',').map(str::to_string).collect(),
                _ => {}
            }
        }
        Some(cfg)
    }
}

/// Parameter handles of the tagger inside some store. Every handle is in φ.
#[derive(Debug, Clone)]
pub struct TaggerParams {
    /// Fixed input statistics; not trained.
    pub norm_mean: ParamId,
    pub norm_scale: ParamId,
    pub l1: Linear,
    pub l2: Linear,
    pub head: Linear,
}

impl TaggerParams {
    pub fn register<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, cfg: &TaggerConfig, rng: &mut R) -> Self {
        let g = ParamGroup::Phi;
        let (m, h, c) = (cfg.mels, cfg.hidden, cfg.classes.len());
        Self {
            norm_mean: store.add("phi.norm.mean", g, Tensor::zeros(&[m])),
            norm_scale: store.add("phi.norm.scale", g, Tensor::full(&[m], S::one())),
            l1: Linear::new(store, "phi.l1", g, m, h, (1.0 / m as f64).sqrt(), rng),
            l2: Linear::new(store, "phi.l2", g, h, h, (1.0 / h as f64).sqrt(), rng),
            head: Linear::new(store, "phi.head", g, h, c, (1.0 / h as f64).sqrt(), rng),
        }
    }

    /// Every handle, for bulk copies between stores.
    pub fn ids(&self) -> Vec<ParamId> {
        vec![
            self.norm_mean,
            self.norm_scale,
            self.l1.w,
            self.l1.b,
            self.l2.w,
            self.l2.b,
            self.head.w,
            self.head.b,
        ]
    }

    /// Normalised mel frames as a graph constant.
    pub fn input<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, mel: &MelSpec) -> Result<Var> {
        let mean = store.value(self.norm_mean).data();
        let scale = store.value(self.norm_scale).data();
        if mel.mels != mean.len() {
            return Err(AudioError::Dim(format!("mel has {} bands, tagger expects {}", mel.mels, mean.len())));
        }
        let data = mel
            .data
            .chunks(mel.mels)
            .flat_map(|row| row.iter().zip(mean).zip(scale).map(|((&x, &m), &s)| (S::from_f64(x as f64) - m) * s))
            .collect();
        Ok(g.constant(Tensor::new(vec![mel.frames, mel.mels], data)?))
    }

    /// Per-frame hidden states `[T, H]`.
    pub fn hidden<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let h = self.l1.forward(g, x)?;
        let h = g.gelu(h);
        let h = self.l2.forward(g, h)?;
        Ok(g.gelu(h))
    }

    /// Clip embedding `[1, H]`: temporal mean of the hidden states.
    pub fn embed<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let h = self.hidden(g, x)?;
        Ok(g.mean_rows(h)?)
    }

    /// Class logits `[steps, C]` from hidden states averaged over `window` frames.
    pub fn step_logits<S: Scalar>(&self, g: &mut Graph<S>, h: Var, window: usize) -> Result<Var> {
        let frames = g.shape(h)[0];
        let w = window.max(1);
        let mut pooled = Vec::with_capacity(frames.div_ceil(w));
        for start in (0..frames).step_by(w) {
            let part = g.slice_rows(h, start, (start + w).min(frames))?;
            pooled.push(g.mean_rows(part)?);
        }
        let stacked = g.concat_rows(&pooled)?;
        Ok(self.head.forward(g, stacked)?)
    }
}

/// Per-step, per-class presence probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTimeline {
    pub classes: Vec<String>,
    pub steps: usize,
    /// `steps x classes`, row-major.
    pub probs: Vec<f32>,
    /// Clip-level probability per class.
    pub clip: Vec<f32>,
    /// Mel frames per timeline step.
    pub window: usize,
}

impl EventTimeline {
    pub fn prob(&self, step: usize, class: usize) -> f32 {
        self.probs[step * self.classes.len() + class]
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    /// Peak probability and the step where it occurs, for one class.
    pub fn peak(&self, class: usize) -> (f32, usize) {
        (0..self.steps).fold((f32::NEG_INFINITY, 0), |best, t| {
            let p = self.prob(t, class);
            if p > best.0 { (p, t) } else { best }
        })
    }

    /// The `n` most probable classes by clip-level probability, ties to the lower index.
    pub fn top_classes(&self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.classes.len()).collect();
        idx.sort_by(|&a, &b| self.clip[b].total_cmp(&self.clip[a]).then(a.cmp(&b)));
        idx.truncate(n);
        idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaggerTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TaggerTrainConfig {
    fn default() -> Self {
        Self { epochs: 30, batch: 16, lr: 3e-3, seed: 0 }
    }
}

/// Standalone toy audio tagger.
#[derive(Debug, Clone)]
pub struct Tagger {
    pub config: TaggerConfig,
    pub store: ParamStore<f32>,
    pub params: TaggerParams,
}

impl Tagger {
    pub fn new(config: TaggerConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let params = TaggerParams::register(&mut store, &config, &mut rng);
        Self { config, store, params }
    }

    /// Every weight zero; every probability is exactly 0.5.
    pub fn zeroed(config: TaggerConfig) -> Self {
        let mut t = Self::new(config, 0);
        for id in [t.params.l1.w, t.params.l2.w, t.params.head.w] {
            t.store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        t
    }

    pub fn classes(&self) -> &[String] {
        &self.config.classes
    }

    /// Sets the fixed input normalisation from per-band statistics of `mels`.
    pub fn fit_normalization(&mut self, mels: &[MelSpec]) {
        let m = self.config.mels;
        let mut sum = vec![0.0f64; m];
        let mut sq = vec![0.0f64; m];
        let mut n = 0usize;
        for mel in mels {
            for row in mel.data.chunks(m) {
                for (j, &v) in row.iter().enumerate() {
                    sum[j] += v as f64;
                    sq[j] += (v as f64) * (v as f64);
                }
                n += 1;
            }
        }
        if n == 0 {
            return;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let scale: Vec<f64> =
            sq.iter().zip(&mean).map(|(q, mu)| 1.0 / (q / n as f64 - mu * mu).max(1e-6).sqrt()).collect();
        *self.store.value_mut(self.params.norm_mean) = Tensor::from_f64(&[m], &mean).expect("shape");
        *self.store.value_mut(self.params.norm_scale) = Tensor::from_f64(&[m], &scale).expect("shape");
    }

    /// Pooled clip embedding (length `hidden`).
    pub fn embedding(&self, mel: &MelSpec) -> Result<Vec<f32>> {
        let mut g = Graph::with_params(&self.store, GroupSet::EMPTY);
        let x = self.params.input(&mut g, &self.store, mel)?;
        let e = self.params.embed(&mut g, x)?;
        Ok(g.value(e).data().to_vec())
    }

    pub fn tag_events(&self, mel: &MelSpec) -> Result<EventTimeline> {
        let mut g = Graph::with_params(&self.store, GroupSet::EMPTY);
        let x = self.params.input(&mut g, &self.store, mel)?;
        let h = self.params.hidden(&mut g, x)?;
        let w = self.config.window.max(1);
        let steps = mel.frames.div_ceil(w);
        let per_step = self.params.step_logits(&mut g, h, w)?;
        let mean = g.mean_rows(h)?;
        let clip = self.params.head.forward(&mut g, mean)?;
        let logits = g.concat_rows(&[per_step, clip])?;
        let probs = g.sigmoid(logits);
        let c = self.config.classes.len();
        let all = g.value(probs).data();
        Ok(EventTimeline {
            classes: self.config.classes.clone(),
            steps,
            probs: all[..steps * c].to_vec(),
            clip: all[steps * c..].to_vec(),
            window: w,
        })
    }

    /// Multi-label training on clip-level targets; returns the mean loss per epoch.
    pub fn train(&mut self, data: &[(MelSpec, Vec<f64>)], cfg: TaggerTrainConfig) -> Result<Vec<f64>> {
        let c = self.config.classes.len();
        if let Some((_, y)) = data.iter().find(|(_, y)| y.len() != c) {
            return Err(AudioError::Dim(format!("label vector of {} for {c} classes", y.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut state = OptimizerState::new(AdamConfig::default());
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut curve = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(cfg.batch.max(1)) {
                let grads = {
                    let mut g = Graph::with_params(&self.store, GroupSet::of(&[ParamGroup::Phi]));
                    let mut rows = Vec::with_capacity(chunk.len());
                    let mut targets = Vec::with_capacity(chunk.len() * c);
                    for &i in chunk {
                        let x = self.params.input(&mut g, &self.store, &data[i].0)?;
                        rows.push(self.params.embed(&mut g, x)?);
                        targets.extend_from_slice(&data[i].1);
                    }
                    let e = g.concat_rows(&rows)?;
                    let logits = self.params.head.forward(&mut g, e)?;
                    let loss = g.bce_with_logits(logits, &targets)?;
                    total += g.value(loss).item() as f64;
                    g.backward(loss)?
                };
                // normalisation statistics are fixed inputs, not weights
                let mut grads = grads;
                grads.drop_param(self.params.norm_mean);
                grads.drop_param(self.params.norm_scale);
                adam_step(&mut self.store, &grads, &mut state, cfg.lr)?;
                batches += 1;
            }
            curve.push(total / batches.max(1) as f64);
        }
        Ok(curve)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_checkpoint(file, &self.store)?;
        let mut sidecar = self.config.header();
        sidecar.push_str(&self.store.group_sidecar());
        std::fs::write(sidecar_path(path), sidecar)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let sidecar = std::fs::read_to_string(sidecar_path(path))?;
        let config = TaggerConfig::parse_header(&sidecar)
            .ok_or_else(|| AudioError::Unsupported("tagger sidecar lacks a config header".into()))?;
        let mut tagger = Tagger::new(config, 0);
        let entries = read_checkpoint::<f32, _>(std::io::BufReader::new(std::fs::File::open(path)?))?;
        tagger.store.load_values(entries.into_iter().map(|e| (e.name, e.value)))?;
        Ok(tagger)
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".groups");
    s.into()
}
