mod common;

use adiff_core::audio::TaggerConfig;
use adiff_core::decode::{
    decode, greedy_decode, nucleus_support, softmax, topk_topp_decode, DecodeConfig, DecodeMode, LanguageModel,
    Prefixed, Result,
};
use adiff_core::model::{Adiff, ModelConfig};
use common::oracles::nucleus_brute;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Fixed(Vec<f64>);

impl LanguageModel for Fixed {
    fn vocab_size(&self) -> usize {
        self.0.len()
    }
    fn next_logits(&self, _: &[u32]) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }
}

fn random_probs(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    // a few exact duplicates so boundary ties actually occur
    let raw: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.2) { 0.5 } else { rng.random::<f64>().powi(3) }).collect();
    let z: f64 = raw.iter().sum();
    raw.iter().map(|v| v / z).collect()
}

fn toy_model() -> Adiff<f64> {
    Adiff::new(ModelConfig::toy(), TaggerConfig { mels: 8, hidden: 8, ..TaggerConfig::default() }, 17).unwrap()
}

#[test]
fn k1_equals_greedy_on_random_prefixes() {
    let m = toy_model();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..100 {
        let emb = |rng: &mut ChaCha8Rng| (0..8).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f32>>();
        let prompt: Vec<u32> = (0..3).map(|_| rng.random_range(0..300)).collect();
        let prefix = m.prefix_tensor(&emb(&mut rng), &emb(&mut rng), &prompt).unwrap();
        let lm = Prefixed::new(&m, prefix);
        let max_new = lm.room().min(8);
        let greedy = greedy_decode(&lm, &DecodeConfig::greedy(max_new)).unwrap();
        let p = rng.random_range(0.05..=1.0);
        let cfg = DecodeConfig { k: 1, p, max_new, seed: i, mode: DecodeMode::TopKTopP, ..DecodeConfig::default() };
        assert_eq!(decode(&lm, &cfg).unwrap(), greedy, "prefix {i}");
    }
}

#[test]
fn nucleus_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let n = rng.random_range(1..40);
        let probs = random_probs(n, &mut rng);
        let k = rng.random_range(1..=n + 2);
        let p = if rng.random_bool(0.1) { 1.0 } else { rng.random_range(0.01..1.0) };
        let got = nucleus_support(&probs, k, p);
        let want = nucleus_brute(&probs, k, p);
        assert_eq!(got.len(), want.len(), "probs {probs:?} k {k} p {p}");
        for (a, b) in got.iter().zip(&want) {
            assert_eq!(a.0, b.0);
            assert!((a.1 - b.1).abs() < 1e-12);
        }
    }
}

#[test]
fn sampling_frequencies_match_support() {
    let logits = vec![2.0, 1.5, 1.2, 0.3, -1.0, 0.9, 1.4];
    let lm = Fixed(logits.clone());
    let cfg = DecodeConfig { k: 5, p: 0.9, max_new: 1, ..DecodeConfig::default() };
    let support = nucleus_support(&softmax(&logits, 1.0), cfg.k, cfg.p);
    assert!(support.len() >= 3);
    let n = 100_000;
    let mut counts = vec![0usize; logits.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..n {
        counts[topk_topp_decode(&lm, &cfg, &mut rng).unwrap()[0] as usize] += 1;
    }
    for (tok, c) in counts.iter().enumerate() {
        let q = support.iter().find(|s| s.0 == tok).map_or(0.0, |s| s.1);
        let sigma = (n as f64 * q * (1.0 - q)).sqrt();
        assert!((*c as f64 - n as f64 * q).abs() <= 3.0 * sigma, "token {tok}: {c} vs {}", n as f64 * q);
    }
}

#[test]
fn full_support_is_ancestral_sampling() {
    let probs = [0.5, 0.25, 0.125, 0.125];
    let s = nucleus_support(&probs, probs.len(), 1.0);
    let mut got: Vec<(usize, f64)> = s.clone();
    got.sort_by_key(|x| x.0);
    assert_eq!(got, probs.iter().copied().enumerate().collect::<Vec<_>>());
}

proptest! {
    #[test]
    fn support_is_normalised_and_inside_topk(seed: u64, n in 1usize..60, k in 1usize..70, p in 0.001f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probs = random_probs(n, &mut rng);
        let s = nucleus_support(&probs, k, p);
        prop_assert!((s.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() <= 1e-9);
        let mut sorted = probs.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let kth = sorted[k.min(n) - 1];
        for &(t, _) in &s {
            prop_assert!(probs[t] >= kth);
        }
    }

    #[test]
    fn seeded_decoding_is_deterministic(seed: u64, logit_seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(logit_seed);
        let logits: Vec<f64> = (0..300).map(|_| rng.random_range(-3.0..3.0)).collect();
        let lm = Fixed(logits);
        let cfg = DecodeConfig { seed, k: 50, p: 0.95, max_new: 20, ..DecodeConfig::default() };
        let a = decode(&lm, &cfg).unwrap();
        prop_assert!(a.len() <= 20);
        prop_assert_eq!(a, decode(&lm, &cfg).unwrap());
    }
}
