use std::fmt::Write as _;

use super::{ModelError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Latent width shared by mappers, cross-projection and decoder.
    pub d: usize,
    pub heads: usize,
    /// Decoder depth.
    pub layers: usize,
    pub vocab: usize,
    /// Latent tokens per audio (`s`).
    pub audio_prefix: usize,
    pub text_prefix: usize,
    pub mapper_depth: usize,
    /// Learnable constant rows appended inside each mapper.
    pub mapper_const: usize,
    pub cross_depth: usize,
    pub cross_const: usize,
    /// Decoder position limit (prefix plus tokens).
    pub max_len: usize,
    /// Width of the pooled encoder embedding.
    pub encoder_dim: usize,
    pub cross_projection: bool,
    /// When false, prompt embeddings enter the prefix without the text mapper.
    pub text_projection: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 128,
            heads: 4,
            layers: 4,
            vocab: 2000,
            audio_prefix: 40,
            text_prefix: 40,
            mapper_depth: 8,
            mapper_const: 10,
            cross_depth: 4,
            cross_const: 8,
            max_len: 121 + 128,
            encoder_dim: 64,
            cross_projection: true,
            text_projection: true,
        }
    }
}

impl ModelConfig {
    /// Tiny configuration for gradient checks and unit tests.
    pub fn toy() -> Self {
        Self {
            d: 8,
            heads: 2,
            layers: 1,
            vocab: 300,
            audio_prefix: 2,
            text_prefix: 3,
            mapper_depth: 1,
            mapper_const: 2,
            cross_depth: 1,
            cross_const: 2,
            max_len: 16,
            encoder_dim: 8,
            cross_projection: true,
            text_projection: true,
        }
    }

    /// Decoder depth for a named scale variant.
    pub fn scale_layers(name: &str) -> Result<usize> {
        match name {
            "base" => Ok(2),
            "med" => Ok(4),
            "large" => Ok(8),
            "xl" => Ok(12),
            other => Err(ModelError::Config(format!("unknown scale {other:?}"))),
        }
    }

    /// `2s + 1 + text`.
    pub fn prefix_len(&self) -> usize {
        2 * self.audio_prefix + 1 + self.text_prefix
    }

    /// Longest explanation (before end-of-text) that fits the decoder.
    pub fn max_target(&self) -> usize {
        self.max_len.saturating_sub(self.prefix_len())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("heads", self.heads),
            ("layers", self.layers),
            ("audio_prefix", self.audio_prefix),
            ("text_prefix", self.text_prefix),
            ("mapper_depth", self.mapper_depth),
            ("cross_depth", self.cross_depth),
            ("encoder_dim", self.encoder_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be at least 1")));
        }
        if !self.d.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!("d={} not divisible by heads={}", self.d, self.heads)));
        }
        if self.vocab < 258 {
            return Err(ModelError::Config(format!("vocab {} below the byte alphabet plus specials", self.vocab)));
        }
        if self.max_len <= self.prefix_len() {
            return Err(ModelError::Config(format!(
                "max_len {} leaves no room after a {}-row prefix",
                self.max_len,
                self.prefix_len()
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "d = {}", self.d);
        let _ = writeln!(s, "heads = {}", self.heads);
        let _ = writeln!(s, "layers = {}", self.layers);
        let _ = writeln!(s, "vocab = {}", self.vocab);
        let _ = writeln!(s, "audio_prefix = {}", self.audio_prefix);
        let _ = writeln!(s, "text_prefix = {}", self.text_prefix);
        let _ = writeln!(s, "mapper_depth = {}", self.mapper_depth);
        let _ = writeln!(s, "mapper_const = {}", self.mapper_const);
        let _ = writeln!(s, "cross_depth = {}", self.cross_depth);
        let _ = writeln!(s, "cross_const = {}", self.cross_const);
        let _ = writeln!(s, "max_len = {}", self.max_len);
        let _ = writeln!(s, "encoder_dim = {}", self.encoder_dim);
        let _ = writeln!(s, "cross_projection = {}", self.cross_projection);
        let _ = writeln!(s, "text_projection = {}", self.text_projection);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| ModelError::Config(format!("bad line {line:?}")))?;
            let num = || v.parse::<usize>().map_err(|_| ModelError::Config(format!("{k}: not a number: {v:?}")));
            let flag = || v.parse::<bool>().map_err(|_| ModelError::Config(format!("{k}: not a bool: {v:?}")));
            match k {
                "d" => c.d = num()?,
                "heads" => c.heads = num()?,
                "layers" => c.layers = num()?,
                "vocab" => c.vocab = num()?,
                "audio_prefix" => c.audio_prefix = num()?,
                "text_prefix" => c.text_prefix = num()?,
                "mapper_depth" => c.mapper_depth = num()?,
                "mapper_const" => c.mapper_const = num()?,
                "cross_depth" => c.cross_depth = num()?,
                "cross_const" => c.cross_const = num()?,
                "max_len" => c.max_len = num()?,
                "encoder_dim" => c.encoder_dim = num()?,
                "cross_projection" => c.cross_projection = flag()?,
                "text_projection" => c.text_projection = flag()?,
                other => return Err(ModelError::Config(format!("unknown key {other:?}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }
}
