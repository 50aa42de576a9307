//! Greedy and top-k/top-p decoding over any next-token scorer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{Adiff, ModelError};
use crate::tensor::{Scalar, Tensor};
use crate::text::EOT_ID;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid decode config: {0}")]
    Config(String),
    #[error("model returned {got} logits, expected {expected}")]
    Logits { got: usize, expected: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, DecodeError>;

/// Tolerance on the cumulative nucleus mass, so sums like 0.7 + 0.1 count as 0.8.
pub const NUCLEUS_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    TopKTopP,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub k: usize,
    pub p: f64,
    pub temperature: f64,
    pub max_new: usize,
    pub seed: u64,
    /// Keep end-of-text in the sampling support even when k/p would drop it.
    pub eot_always_eligible: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { mode: DecodeMode::TopKTopP, k: 3, p: 0.8, temperature: 1.0, max_new: 64, seed: 0, eot_always_eligible: false }
    }
}

impl DecodeConfig {
    pub fn greedy(max_new: usize) -> Self {
        Self { mode: DecodeMode::Greedy, max_new, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(DecodeError::Config("k must be at least 1".into()));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(DecodeError::Config(format!("p = {} outside (0, 1]", self.p)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(DecodeError::Config(format!("temperature = {} must be positive", self.temperature)));
        }
        if self.max_new == 0 {
            return Err(DecodeError::Config("max_new must be at least 1".into()));
        }
        Ok(())
    }
}

/// Anything that scores the next token given the tokens generated so far.
pub trait LanguageModel {
    fn vocab_size(&self) -> usize;
    fn next_logits(&self, generated: &[u32]) -> Result<Vec<f64>>;
}

/// An ADIFF model bound to one post-cross prefix.
pub struct Prefixed<'a, S: Scalar> {
    pub model: &'a Adiff<S>,
    pub prefix: Tensor<S>,
}

impl<'a, S: Scalar> Prefixed<'a, S> {
    pub fn new(model: &'a Adiff<S>, prefix: Tensor<S>) -> Self {
        Self { model, prefix }
    }

    /// Longest generation that still fits the decoder context.
    pub fn room(&self) -> usize {
        self.model.config.max_len + 1 - self.prefix.shape()[0]
    }
}

impl<S: Scalar> LanguageModel for Prefixed<'_, S> {
    fn vocab_size(&self) -> usize {
        self.model.config.vocab
    }

    fn next_logits(&self, generated: &[u32]) -> Result<Vec<f64>> {
        Ok(self.model.next_token_logits(&self.prefix, generated)?)
    }
}

/// Softmax of `logits / temperature`, computed with the row max subtracted.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| ((l - max) / temperature).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    out
}

/// Lowest index among the maxima.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Renormalised top-k then top-p support of `probs` as `(token, probability)`, in
/// descending probability order (ties by lower token id).
///
/// Top-p runs on the top-k survivors after renormalisation. Tokens tying the
/// last kept probability are kept as well.
pub fn nucleus_support(probs: &[f64], k: usize, p: f64) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order.truncate(k.max(1));
    let mass: f64 = order.iter().map(|&i| probs[i]).sum();
    let mut kept = 0;
    let mut cum = 0.0;
    while kept < order.len() {
        cum += probs[order[kept]] / mass;
        kept += 1;
        if cum >= p - NUCLEUS_SLACK {
            break;
        }
    }
    let edge = probs[order[kept - 1]];
    while kept < order.len() && probs[order[kept]] == edge {
        kept += 1;
    }
    order.truncate(kept);
    let z: f64 = order.iter().map(|&i| probs[i]).sum();
    order.into_iter().map(|i| (i, probs[i] / z)).collect()
}

/// Draws one entry of a `(token, probability)` support by inverse CDF.
pub fn sample_support<R: Rng + ?Sized>(support: &[(usize, f64)], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for &(tok, pr) in support {
        cum += pr;
        if u < cum {
            return tok;
        }
    }
    support.last().expect("non-empty support").0
}

fn checked_logits(lm: &dyn LanguageModel, generated: &[u32]) -> Result<Vec<f64>> {
    let logits = lm.next_logits(generated)?;
    if logits.len() != lm.vocab_size() {
        return Err(DecodeError::Logits { got: logits.len(), expected: lm.vocab_size() });
    }
    Ok(logits)
}

/// Argmax decoding until end-of-text or `max_new` tokens.
pub fn greedy_decode(lm: &dyn LanguageModel, cfg: &DecodeConfig) -> Result<Vec<u32>> {
    cfg.validate()?;
    let mut out = Vec::new();
    while out.len() < cfg.max_new {
        let tok = argmax(&checked_logits(lm, &out)?) as u32;
        out.push(tok);
        if tok == EOT_ID {
            break;
        }
    }
    Ok(out)
}

/// Top-k/top-p sampling with a caller-supplied RNG.
pub fn topk_topp_decode<R: Rng + ?Sized>(lm: &dyn LanguageModel, cfg: &DecodeConfig, rng: &mut R) -> Result<Vec<u32>> {
    cfg.validate()?;
    let mut out = Vec::new();
    while out.len() < cfg.max_new {
        let probs = softmax(&checked_logits(lm, &out)?, cfg.temperature);
        let mut support = nucleus_support(&probs, cfg.k, cfg.p);
        let eot = EOT_ID as usize;
        if cfg.eot_always_eligible && eot < probs.len() && !support.iter().any(|&(t, _)| t == eot) {
            support = support.iter().map(|&(t, _)| (t, probs[t])).chain([(eot, probs[eot])]).collect();
            let z: f64 = support.iter().map(|s| s.1).sum();
            support.iter_mut().for_each(|s| s.1 /= z);
        }
        let tok = sample_support(&support, rng) as u32;
        out.push(tok);
        if tok == EOT_ID {
            break;
        }
    }
    Ok(out)
}

/// Decodes per `cfg.mode`, seeding a private RNG from `cfg.seed`.
pub fn decode(lm: &dyn LanguageModel, cfg: &DecodeConfig) -> Result<Vec<u32>> {
    match cfg.mode {
        DecodeMode::Greedy => greedy_decode(lm, cfg),
        DecodeMode::TopKTopP => topk_topp_decode(lm, cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Emits a fixed script, then end-of-text forever.
    struct Scripted(Vec<u32>);

    impl LanguageModel for Scripted {
        fn vocab_size(&self) -> usize {
            300
        }
        fn next_logits(&self, generated: &[u32]) -> Result<Vec<f64>> {
            let want = self.0.get(generated.len()).copied().unwrap_or(EOT_ID);
            let mut l = vec![0.0; 300];
            l[want as usize] = 5.0;
            Ok(l)
        }
    }

    #[test]
    fn greedy_follows_the_favoured_token() {
        let lm = Scripted(vec![5]);
        let cfg = DecodeConfig::greedy(10);
        assert_eq!(greedy_decode(&lm, &cfg).unwrap(), vec![5, EOT_ID]);
        assert_eq!(greedy_decode(&lm, &cfg).unwrap(), greedy_decode(&lm, &cfg).unwrap());
    }

    #[test]
    fn greedy_respects_max_new() {
        let lm = Scripted(vec![1; 50]);
        assert_eq!(greedy_decode(&lm, &DecodeConfig::greedy(4)).unwrap().len(), 4);
    }

    #[test]
    fn nucleus_example() {
        let s = nucleus_support(&[0.6, 0.3, 0.1], 3, 0.8);
        assert_eq!(s.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1]);
        assert!((s[0].1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_ties_are_included() {
        let s = nucleus_support(&[0.4, 0.2, 0.2, 0.2], 4, 0.5);
        assert_eq!(s.len(), 4);
    }

    #[test]
    fn float_sum_reaches_threshold() {
        assert!(std::hint::black_box(0.7) + 0.2 < 0.9);
        let s = nucleus_support(&[0.7, 0.1, 0.2], 3, 0.9);
        assert_eq!(s.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn eot_kept_when_requested() {
        let mut l = vec![0.0; 300];
        l[7] = 10.0;
        struct Fixed(Vec<f64>);
        impl LanguageModel for Fixed {
            fn vocab_size(&self) -> usize {
                300
            }
            fn next_logits(&self, _: &[u32]) -> Result<Vec<f64>> {
                Ok(self.0.clone())
            }
        }
        let lm = Fixed(l);
        let cfg = DecodeConfig { k: 1, max_new: 400, eot_always_eligible: true, ..DecodeConfig::default() };
        let out = topk_topp_decode(&lm, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(out.iter().all(|&t| t == 7 || t == EOT_ID));
        let plain = DecodeConfig { eot_always_eligible: false, ..cfg };
        assert_eq!(topk_topp_decode(&lm, &plain, &mut ChaCha8Rng::seed_from_u64(1)).unwrap(), vec![7; 400]);
    }

    #[test]
    fn config_validation() {
        assert!(DecodeConfig { k: 0, ..DecodeConfig::default() }.validate().is_err());
        assert!(DecodeConfig { p: 0.0, ..DecodeConfig::default() }.validate().is_err());
        assert!(DecodeConfig { p: 1.5, ..DecodeConfig::default() }.validate().is_err());
        assert!(DecodeConfig { max_new: 0, ..DecodeConfig::default() }.validate().is_err());
        assert!(DecodeConfig::default().validate().is_ok());
    }
}
