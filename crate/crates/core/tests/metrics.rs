mod common;

use adiff_core::metrics::{bleu, cider, meteor_lite, rouge_l, rouge_l_pair, EvalPair, MetricReport, NoSpice};
use adiff_core::text::metric_tokenize;
use common::oracles::{bleu_brute, cider_brute, meteor_brute, rouge_l_brute};
use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 7] = ["dog", "barks", "a", "the", "loud", "car", "rain"];

fn sentence(rng: &mut impl Rng, lo: usize, hi: usize) -> Vec<String> {
    let n = rng.random_range(lo..=hi);
    (0..n).map(|_| WORDS.choose(rng).unwrap().to_string()).collect()
}

fn random_pairs(seed: u64, n: usize) -> Vec<EvalPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let refs = rng.random_range(1..=3);
            EvalPair { candidate: sentence(&mut rng, 1, 6), references: (0..refs).map(|_| sentence(&mut rng, 1, 7)).collect() }
        })
        .collect()
}

fn raw(pairs: &[EvalPair]) -> Vec<(Vec<String>, Vec<Vec<String>>)> {
    pairs.iter().map(|p| (p.candidate.clone(), p.references.clone())).collect()
}

#[test]
fn metrics_match_brute_force_oracles() {
    for seed in 0..4 {
        let pairs = random_pairs(seed, 50);
        let r = raw(&pairs);
        for n in 1..=4 {
            let (a, b) = (bleu(&pairs, n), bleu_brute(&r, n));
            assert!((a - b).abs() < 1e-9, "BLEU{n}: {a} vs {b}");
        }
        let mut rouge_oracle = 0.0;
        let mut meteor_oracle = 0.0;
        for (p, (c, refs)) in pairs.iter().zip(&r) {
            let want = rouge_l_brute(c, refs);
            assert!((rouge_l_pair(p) - want).abs() < 1e-9);
            rouge_oracle += want;
            meteor_oracle += refs.iter().map(|rf| meteor_brute(c, rf)).fold(0.0, f64::max);
        }
        assert!((rouge_l(&pairs) - rouge_oracle / 50.0).abs() < 1e-9);
        assert!((meteor_lite(&pairs) - meteor_oracle / 50.0).abs() < 1e-9);
        let got = cider(&pairs);
        let want = cider_brute(&r);
        for (a, b) in got.per_pair.iter().zip(&want) {
            assert!((a - b).abs() < 1e-9, "CIDEr {a} vs {b}");
        }
    }
}

#[test]
fn hand_examples() {
    let p = |c: &str, r: &str| vec![EvalPair::from_text(c, &[r])];
    assert!((bleu(&p("the cat sat", "the cat sat down"), 1) - 0.7165).abs() < 5e-5);
    assert_eq!(rouge_l(&p("a b c d", "a c b d")), 0.75);
    assert_eq!(meteor_lite(&p("b a", "a b")), 0.5);
}

#[test]
fn identical_candidate_in_varied_corpus_scores_near_ten() {
    let texts = ["a dog barks twice in the yard", "rain falls on a tin roof", "an engine idles then revs", "birds chirp at dawn near water", "a bell rings three slow times"];
    let mut pairs: Vec<EvalPair> = texts.iter().map(|t| EvalPair::from_text(t, &[t])).collect();
    let c = cider(&pairs);
    assert!(c.per_pair.iter().all(|s| (s - 10.0).abs() < 1e-9));
    assert!(!c.degenerate_idf);
    pairs[0].candidate = metric_tokenize("quiet humming fridge");
    assert_eq!(cider(&pairs).per_pair[0], 0.0);
}

#[test]
fn average_matches_the_published_row() {
    // ACD tier-1 row of the appendix results table: nine metrics and their AVG.
    let r = MetricReport {
        bleu1: 0.384,
        bleu2: 0.256,
        bleu3: 0.182,
        bleu4: 0.129,
        meteor: 0.208,
        rouge_l: 0.352,
        cider: 0.470,
        spice: Some(0.130),
        spider: 0.300,
        spice_missing: false,
        meteor_lite: false,
        idf_degenerate: false,
    };
    assert!((r.average() - 0.268).abs() < 5e-4);
}

#[test]
fn report_csv_has_table_columns() {
    let pairs = random_pairs(9, 10);
    let r = MetricReport::compute(&pairs, &NoSpice);
    assert!(r.spice_missing);
    assert_eq!(r.values().len(), 8);
    let mut buf = Vec::new();
    MetricReport::write_csv(&mut buf, &[("toy".into(), r.clone())]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "run,BLEU1,BLEU2,BLEU3,BLEU4,METEOR,ROUGE_L,CIDEr,SPICE,SPIDEr,AVG");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 11);
    assert_eq!(row[8], "");
    assert!((row[10].parse::<f64>().unwrap() - r.average()).abs() < 1e-6);
}

fn unique_sentence(rng: &mut impl Rng, tag: usize) -> Vec<String> {
    let mut s = sentence(rng, 4, 8);
    let at = rng.random_range(0..s.len());
    s.insert(at, format!("w{tag}"));
    s
}

proptest! {
    #[test]
    fn exact_matches_score_one(seed: u64, n in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs: Vec<EvalPair> = (0..n)
            .map(|i| {
                let s = unique_sentence(&mut rng, i);
                EvalPair { candidate: s.clone(), references: vec![s] }
            })
            .collect();
        let r = MetricReport::compute(&pairs, &NoSpice);
        for v in [r.bleu1, r.bleu2, r.bleu3, r.bleu4, r.rouge_l] {
            prop_assert!((v - 1.0).abs() < 1e-12);
        }
        prop_assert!((r.cider - 10.0).abs() < 1e-9);
        // METEOR-lite keeps its fragmentation term even for a single chunk
        prop_assert!(r.meteor < 1.0 && r.meteor >= 1.0 - 0.5 / 125.0 - 1e-12);
    }

    #[test]
    fn disjoint_vocabularies_score_zero(seed: u64, n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs: Vec<EvalPair> = (0..n)
            .map(|_| {
                let refs = vec![sentence(&mut rng, 1, 6)];
                let cand = sentence(&mut rng, 1, 6).into_iter().map(|w| w.to_uppercase()).collect();
                EvalPair { candidate: cand, references: refs }
            })
            .collect();
        let r = MetricReport::compute(&pairs, &NoSpice);
        prop_assert_eq!(r.values(), vec![0.0; 8]);
    }

    #[test]
    fn bleu_non_increasing_in_order(seed: u64) {
        let pairs = random_pairs(seed, 8);
        let b: Vec<f64> = (1..=4).map(|n| bleu(&pairs, n)).collect();
        for w in b.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", b);
        }
    }

    #[test]
    fn cider_ignores_reference_order(seed: u64) {
        let pairs = random_pairs(seed, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let shuffled: Vec<EvalPair> = pairs
            .iter()
            .map(|p| {
                let mut q = p.clone();
                q.references.shuffle(&mut rng);
                q
            })
            .collect();
        let (a, b) = (cider(&pairs), cider(&shuffled));
        for (x, y) in a.per_pair.iter().zip(&b.per_pair) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
