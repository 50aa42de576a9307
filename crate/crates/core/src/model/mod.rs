//! The ADIFF network: tagger encoder, projection mappers, separator, cross-projection
//! and the prefix-conditioned decoder.

mod config;
mod io;

pub use config::ModelConfig;
pub use io::{load_model, save_model};

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::audio::{AudioError, MelSpec, Tagger, TaggerConfig, TaggerParams};
use crate::layers::{causal_mask, Linear, Transformer};
use crate::tensor::{Graph, GroupSet, ParamGroup, ParamId, ParamStore, Scalar, Tensor, TensorError, Var};
use crate::text::{Vocab, EOT_ID};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("context of {len} positions exceeds decoder maximum {max}")]
    ContextTooLong { len: usize, max: usize },
    #[error("token {id} out of range for vocabulary of {size}")]
    Token { id: u32, size: usize },
    #[error("empty target sequence")]
    EmptyTarget,
    #[error("latent vector has zero norm")]
    ZeroNorm,
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// The assembled prefix and the boundaries of its four blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixAssembly<R> {
    pub seq: R,
    /// Half-open ranges: audio 1, separator, audio 2, text.
    pub blocks: [(usize, usize); 4],
}

impl<R> PrefixAssembly<R> {
    pub fn len(&self) -> usize {
        self.blocks[3].1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn map<T>(self, f: impl FnOnce(R) -> T) -> PrefixAssembly<T> {
        PrefixAssembly { seq: f(self.seq), blocks: self.blocks }
    }
}

/// Audio projection: expand, reshape, append constants, transform, drop constants.
#[derive(Debug, Clone)]
pub struct AudioMapper {
    pub expand: Linear,
    pub constant: ParamId,
    pub body: Transformer,
}

#[derive(Debug, Clone)]
pub struct TextMapper {
    pub constant: ParamId,
    pub body: Transformer,
}

#[derive(Debug, Clone)]
pub struct CrossProjection {
    pub constant: ParamId,
    pub body: Transformer,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub wpe: ParamId,
    pub body: Transformer,
    pub head: Linear,
}

/// One training or scoring example already reduced to encoder embeddings and ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub emb1: Vec<f32>,
    pub emb2: Vec<f32>,
    /// Prompt ids padded to the text prefix length.
    pub prompt: Vec<u32>,
    /// Target ids ending in end-of-text.
    pub target: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct Adiff<S: Scalar> {
    pub config: ModelConfig,
    pub tagger_config: TaggerConfig,
    pub store: ParamStore<S>,
    pub tagger: TaggerParams,
    pub wte: ParamId,
    pub audio_map: AudioMapper,
    pub text_map: TextMapper,
    pub cross: CrossProjection,
    pub decoder: Decoder,
    /// Free-form metadata persisted with checkpoints (completed stages, provenance).
    pub meta: BTreeMap<String, String>,
}

impl<S: Scalar> Adiff<S> {
    pub fn new(config: ModelConfig, tagger_config: TaggerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if tagger_config.hidden != config.encoder_dim {
            return Err(ModelError::Config(format!(
                "encoder_dim {} does not match tagger hidden size {}",
                config.encoder_dim, tagger_config.hidden
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let d = c.d;
        let tagger = TaggerParams::register(&mut store, &tagger_config, &mut rng);
        let zeta = ParamGroup::Zeta;
        let audio_map = AudioMapper {
            expand: Linear::new(&mut store, "zeta.audio.expand", zeta, c.encoder_dim, c.audio_prefix * d, 0.02, &mut rng),
            constant: store.add("zeta.audio.const", zeta, Tensor::randn(&[c.mapper_const, d], 0.02, &mut rng)),
            body: Transformer::new(&mut store, "zeta.audio.tf", zeta, c.mapper_depth, d, c.heads, &mut rng),
        };
        let text_map = TextMapper {
            constant: store.add("zeta.text.const", zeta, Tensor::randn(&[c.mapper_const, d], 0.02, &mut rng)),
            body: Transformer::new(&mut store, "zeta.text.tf", zeta, c.mapper_depth, d, c.heads, &mut rng),
        };
        let wte = store.add("psi.wte", ParamGroup::Psi, Tensor::randn(&[c.vocab, d], 0.02, &mut rng));
        let beta = ParamGroup::Beta;
        let cross = CrossProjection {
            constant: store.add("beta.const", beta, Tensor::randn(&[c.cross_const, d], 0.02, &mut rng)),
            body: Transformer::new(&mut store, "beta.tf", beta, c.cross_depth, d, c.heads, &mut rng),
        };
        let theta = ParamGroup::Theta;
        let decoder = Decoder {
            wpe: store.add("theta.wpe", theta, Tensor::randn(&[c.max_len, d], 0.01, &mut rng)),
            body: Transformer::new(&mut store, "theta.tf", theta, c.layers, d, c.heads, &mut rng),
            head: Linear::new(&mut store, "theta.head", theta, d, c.vocab, 0.02, &mut rng),
        };
        Ok(Self {
            config,
            tagger_config,
            store,
            tagger,
            wte,
            audio_map,
            text_map,
            cross,
            decoder,
            meta: BTreeMap::new(),
        })
    }

    /// Copies pretrained tagger weights into φ.
    pub fn load_tagger(&mut self, tagger: &Tagger) -> Result<()> {
        if tagger.config != self.tagger_config {
            return Err(ModelError::Config("tagger config differs from the model's".into()));
        }
        for (dst, src) in self.tagger.ids().into_iter().zip(tagger.params.ids()) {
            *self.store.value_mut(dst) = tagger.store.value(src).convert();
        }
        Ok(())
    }

    /// Extracts φ as a standalone tagger.
    pub fn tagger(&self) -> Tagger {
        let mut t = Tagger::new(self.tagger_config.clone(), 0);
        for (src, dst) in self.tagger.ids().into_iter().zip(t.params.ids()) {
            *t.store.value_mut(dst) = self.store.value(src).convert();
        }
        t
    }

    /// Same architecture and values at another precision.
    pub fn convert<T: Scalar>(&self) -> Adiff<T> {
        let mut out = Adiff::<T>::new(self.config.clone(), self.tagger_config.clone(), 0).expect("valid config");
        for (id, p) in self.store.iter() {
            *out.store.value_mut(id) = p.value.convert();
        }
        out.meta = self.meta.clone();
        out
    }

    pub fn prefix_len(&self) -> usize {
        self.config.prefix_len()
    }

    /// Encoder embedding `[1, e]` computed inside the graph.
    pub fn encode(&self, g: &mut Graph<S>, mel: &MelSpec) -> Result<Var> {
        let x = self.tagger.input(g, &self.store, mel)?;
        Ok(self.tagger.embed(g, x)?)
    }

    /// Encoder embedding as plain values, for caching.
    pub fn embed_audio(&self, mel: &MelSpec) -> Result<Vec<f32>> {
        let mut g = Graph::with_params(&self.store, GroupSet::EMPTY);
        let e = self.encode(&mut g, mel)?;
        Ok(g.value(e).data().iter().map(|v| v.as_f64() as f32).collect())
    }

    pub fn embedding_var(&self, g: &mut Graph<S>, emb: &[f32]) -> Result<Var> {
        if emb.len() != self.config.encoder_dim {
            return Err(ModelError::Dim(format!("embedding of {} for encoder dim {}", emb.len(), self.config.encoder_dim)));
        }
        let t = Tensor::new(vec![1, emb.len()], emb.iter().map(|&v| S::from_f64(v as f64)).collect())?;
        Ok(g.constant(t))
    }

    /// `[1, e]` embedding to `[s, d]` latent tokens.
    pub fn project_audio(&self, g: &mut Graph<S>, emb: Var) -> Result<Var> {
        let c = &self.config;
        let shape = g.shape(emb).to_vec();
        if shape != [1, c.encoder_dim] {
            return Err(ModelError::Dim(format!("audio embedding {shape:?}, expected [1, {}]", c.encoder_dim)));
        }
        let m = &self.audio_map;
        let wide = m.expand.forward(g, emb)?;
        let rows = g.reshape(wide, &[c.audio_prefix, c.d])?;
        let k = g.param(m.constant)?;
        let x = g.concat_rows(&[rows, k])?;
        let y = m.body.forward(g, x, None)?;
        Ok(g.slice_rows(y, 0, c.audio_prefix)?)
    }

    /// Prompt ids (already padded) to `[text_prefix, d]` latent tokens.
    pub fn project_text(&self, g: &mut Graph<S>, prompt: &[u32]) -> Result<Var> {
        let c = &self.config;
        if prompt.len() != c.text_prefix {
            return Err(ModelError::Dim(format!("prompt of {} ids, expected {}", prompt.len(), c.text_prefix)));
        }
        let emb = self.token_embeddings(g, prompt)?;
        if !c.text_projection {
            return Ok(emb);
        }
        let k = g.param(self.text_map.constant)?;
        let x = g.concat_rows(&[emb, k])?;
        let y = self.text_map.body.forward(g, x, None)?;
        Ok(g.slice_rows(y, 0, c.text_prefix)?)
    }

    pub fn token_embeddings(&self, g: &mut Graph<S>, ids: &[u32]) -> Result<Var> {
        let v = self.config.vocab;
        if let Some(&id) = ids.iter().find(|&&t| t as usize >= v) {
            return Err(ModelError::Token { id, size: v });
        }
        let wte = g.param(self.wte)?;
        let idx: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
        Ok(g.embedding(wte, &idx)?)
    }

    /// `[lat1 | sep | lat2 | text]`, with the separator taken from ψ at end-of-text.
    pub fn assemble_prefix(&self, g: &mut Graph<S>, lat1: Var, lat2: Var, text: Var) -> Result<PrefixAssembly<Var>> {
        let (s1, s2, t) = (g.shape(lat1)[0], g.shape(lat2)[0], g.shape(text)[0]);
        if s1 != s2 {
            return Err(ModelError::Dim(format!("audio latents of {s1} and {s2} rows")));
        }
        let sep = self.token_embeddings(g, &[EOT_ID])?;
        let seq = g.concat_rows(&[lat1, sep, lat2, text])?;
        Ok(PrefixAssembly { seq, blocks: [(0, s1), (s1, s1 + 1), (s1 + 1, 2 * s1 + 1), (2 * s1 + 1, 2 * s1 + 1 + t)] })
    }

    /// Cross-projection over the whole prefix; the identity when disabled.
    pub fn cross_project(&self, g: &mut Graph<S>, pre: &PrefixAssembly<Var>) -> Result<PrefixAssembly<Var>> {
        if !self.config.cross_projection {
            return Ok(pre.clone());
        }
        let k = g.param(self.cross.constant)?;
        let x = g.concat_rows(&[pre.seq, k])?;
        let y = self.cross.body.forward(g, x, None)?;
        let seq = g.slice_rows(y, 0, pre.len())?;
        Ok(PrefixAssembly { seq, blocks: pre.blocks })
    }

    /// Pre- and post-cross prefixes from two embeddings and a padded prompt.
    pub fn prefix(
        &self,
        g: &mut Graph<S>,
        emb1: Var,
        emb2: Var,
        prompt: &[u32],
    ) -> Result<(PrefixAssembly<Var>, PrefixAssembly<Var>)> {
        let lat1 = self.project_audio(g, emb1)?;
        let lat2 = self.project_audio(g, emb2)?;
        let text = self.project_text(g, prompt)?;
        let pre = self.assemble_prefix(g, lat1, lat2, text)?;
        let post = self.cross_project(g, &pre)?;
        Ok((pre, post))
    }

    /// Post-cross prefix for cached embeddings, as a plain tensor.
    pub fn prefix_tensor(&self, emb1: &[f32], emb2: &[f32], prompt: &[u32]) -> Result<Tensor<S>> {
        let mut g = Graph::with_params(&self.store, GroupSet::EMPTY);
        let e1 = self.embedding_var(&mut g, emb1)?;
        let e2 = self.embedding_var(&mut g, emb2)?;
        let (_, post) = self.prefix(&mut g, e1, e2, prompt)?;
        Ok(g.value(post.seq).clone())
    }

    /// Decoder logits `[rows(prefix) + tokens, V]` for `prefix` followed by `tokens`.
    pub fn decode_logits(&self, g: &mut Graph<S>, prefix: Option<Var>, tokens: &[u32]) -> Result<Var> {
        let mut parts = Vec::with_capacity(2);
        if let Some(p) = prefix {
            parts.push(p);
        }
        if !tokens.is_empty() {
            parts.push(self.token_embeddings(g, tokens)?);
        }
        let x = match parts.len() {
            0 => return Err(ModelError::EmptyTarget),
            1 => parts[0],
            _ => g.concat_rows(&parts)?,
        };
        let len = g.shape(x)[0];
        if len > self.config.max_len {
            return Err(ModelError::ContextTooLong { len, max: self.config.max_len });
        }
        let wpe = g.param(self.decoder.wpe)?;
        let pos = g.slice_rows(wpe, 0, len)?;
        let x = g.add(x, pos)?;
        let mask = g.constant(causal_mask(len));
        let h = self.decoder.body.forward(g, x, Some(mask))?;
        Ok(self.decoder.head.forward(g, h)?)
    }

    /// Summed token NLL of `target` given a prefix; prefix positions carry no loss.
    pub fn target_nll(&self, g: &mut Graph<S>, prefix: Var, target: &[u32]) -> Result<Var> {
        if target.is_empty() {
            return Err(ModelError::EmptyTarget);
        }
        let k = g.shape(prefix)[0];
        let l = target.len();
        let logits = self.decode_logits(g, Some(prefix), &target[..l - 1])?;
        let rows = g.slice_rows(logits, k - 1, k - 1 + l)?;
        let idx: Vec<usize> = target.iter().map(|&t| t as usize).collect();
        Ok(g.cross_entropy(rows, &idx)?)
    }

    /// Mean over the batch of each example's summed token NLL.
    pub fn sequence_loss(&self, g: &mut Graph<S>, batch: &[Example]) -> Result<Var> {
        if batch.is_empty() {
            return Err(ModelError::EmptyTarget);
        }
        let mut total: Option<Var> = None;
        for ex in batch {
            let e1 = self.embedding_var(g, &ex.emb1)?;
            let e2 = self.embedding_var(g, &ex.emb2)?;
            let (_, post) = self.prefix(g, e1, e2, &ex.prompt)?;
            let nll = self.target_nll(g, post.seq, &ex.target)?;
            total = Some(match total {
                Some(t) => g.add(t, nll)?,
                None => nll,
            });
        }
        Ok(g.scale(total.expect("non-empty"), 1.0 / batch.len() as f64))
    }

    /// Next-token logits after `generated`, given a post-cross prefix tensor.
    pub fn next_token_logits(&self, prefix: &Tensor<S>, generated: &[u32]) -> Result<Vec<f64>> {
        let mut g = Graph::with_params(&self.store, GroupSet::EMPTY);
        let p = g.constant(prefix.clone());
        let logits = self.decode_logits(&mut g, Some(p), generated)?;
        let t = g.value(logits);
        let last = t.shape()[0] - 1;
        Ok(t.row(last).iter().map(|v| v.as_f64()).collect())
    }

    /// Pads or truncates encoded prompt ids to the text prefix length with end-of-text.
    pub fn prompt_ids(&self, vocab: &Vocab, prompt: &str) -> Vec<u32> {
        let mut ids = vocab.encode(prompt);
        ids.truncate(self.config.text_prefix);
        ids.resize(self.config.text_prefix, EOT_ID);
        ids
    }

    /// Target ids: encoded text followed by end-of-text, truncated to fit the decoder.
    pub fn target_ids(&self, vocab: &Vocab, text: &str) -> Vec<u32> {
        let mut ids = vocab.encode(text);
        ids.truncate(self.config.max_target());
        ids.push(EOT_ID);
        ids
    }

    /// Vocabulary id whose ψ row has the highest cosine similarity with `latent`.
    pub fn nearest_vocab(&self, latent: &[S]) -> Result<u32> {
        nearest_vocab(latent, self.store.value(self.wte))
    }
}

/// Cosine argmax over the rows of `table`; ties go to the lowest id.
pub fn nearest_vocab<S: Scalar>(latent: &[S], table: &Tensor<S>) -> Result<u32> {
    let (v, d) = table.dims2("nearest_vocab")?;
    if latent.len() != d {
        return Err(ModelError::Dim(format!("latent of {} for embedding dim {d}", latent.len())));
    }
    let norm = latent.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(ModelError::ZeroNorm);
    }
    let mut best = (f64::NEG_INFINITY, 0u32);
    for i in 0..v {
        let row = table.row(i);
        let rn = row.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
        if rn == 0.0 {
            continue;
        }
        let dot: f64 = row.iter().zip(latent).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
        let cos = dot / (rn * norm);
        if cos > best.0 {
            best = (cos, i as u32);
        }
    }
    Ok(best.1)
}
