//! Corpus-level captioning metrics: BLEU, ROUGE-L, METEOR-lite, CIDEr, SPIDEr.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::text::metric_tokenize;

/// One candidate with its references, already tokenised.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvalPair {
    pub fn from_text(candidate: &str, references: &[impl AsRef<str>]) -> Self {
        Self {
            candidate: metric_tokenize(candidate),
            references: references.iter().map(|r| metric_tokenize(r.as_ref())).collect(),
        }
    }
}

type Counts<'a> = HashMap<&'a [String], usize>;

fn ngrams(words: &[String], n: usize) -> Counts<'_> {
    let mut out = HashMap::new();
    if words.len() >= n {
        for w in words.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Corpus BLEU up to order `n` (1..=4), no smoothing.
pub fn bleu(pairs: &[EvalPair], n: usize) -> f64 {
    assert!((1..=4).contains(&n), "BLEU order {n} outside 1..=4");
    let mut matched = vec![0usize; n];
    let mut total = vec![0usize; n];
    let (mut c, mut r) = (0usize, 0usize);
    for p in pairs {
        c += p.candidate.len();
        let cl = p.candidate.len() as i64;
        r += p
            .references
            .iter()
            .map(|x| x.len())
            .min_by_key(|&l| ((l as i64 - cl).abs(), l))
            .unwrap_or(0);
        for k in 1..=n {
            let cand = ngrams(&p.candidate, k);
            let mut max_ref: Counts = HashMap::new();
            for rf in &p.references {
                for (g, cnt) in ngrams(rf, k) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(cnt);
                }
            }
            for (g, cnt) in &cand {
                matched[k - 1] += (*cnt).min(max_ref.get(g).copied().unwrap_or(0));
                total[k - 1] += cnt;
            }
        }
    }
    if c == 0 || matched.contains(&0) {
        return 0.0;
    }
    let log_mean = (0..n).map(|k| (matched[k] as f64 / total[k] as f64).ln()).sum::<f64>() / n as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * log_mean.exp()
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

pub const ROUGE_BETA: f64 = 1.2;

/// Sentence ROUGE-L F-measure, max over references.
pub fn rouge_l_pair(p: &EvalPair) -> f64 {
    let b2 = ROUGE_BETA * ROUGE_BETA;
    p.references
        .iter()
        .map(|r| {
            let l = lcs(&p.candidate, r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let (prec, rec) = (l / p.candidate.len() as f64, l / r.len() as f64);
            (1.0 + b2) * prec * rec / (rec + b2 * prec)
        })
        .fold(0.0, f64::max)
}

pub fn rouge_l(pairs: &[EvalPair]) -> f64 {
    mean(pairs.iter().map(rouge_l_pair))
}

/// Node budget for the minimum-chunk alignment search before settling for the best found.
const ALIGN_BUDGET: usize = 200_000;

struct Aligner<'a> {
    cand: &'a [String],
    reference: &'a [String],
    /// Remaining optional skips per word: cand count minus matchable count.
    skips: HashMap<&'a str, usize>,
    used: Vec<bool>,
    best: usize,
    nodes: usize,
}

impl Aligner<'_> {
    fn search(&mut self, i: usize, prev: Option<usize>, chunks: usize) {
        if chunks >= self.best || self.nodes >= ALIGN_BUDGET {
            return;
        }
        self.nodes += 1;
        if i == self.cand.len() {
            self.best = chunks;
            return;
        }
        let w = self.cand[i].as_str();
        let mut options: Vec<usize> = (0..self.reference.len())
            .filter(|&j| !self.used[j] && self.reference[j] == self.cand[i])
            .collect();
        if let Some(next) = prev.map(|j| j + 1) {
            if let Some(pos) = options.iter().position(|&j| j == next) {
                options.remove(pos);
                options.insert(0, next);
            }
        }
        for j in options {
            self.used[j] = true;
            let extra = usize::from(prev.map(|q| q + 1) != Some(j));
            self.search(i + 1, Some(j), chunks + extra);
            self.used[j] = false;
        }
        let left = self.skips.get(w).copied().unwrap_or(0);
        if left > 0 {
            self.skips.insert(w, left - 1);
            self.search(i + 1, None, chunks);
            self.skips.insert(w, left);
        }
    }
}

/// `(matches, chunks)` of a maximum exact-match alignment with the fewest chunks.
pub fn meteor_alignment(cand: &[String], reference: &[String]) -> (usize, usize) {
    let mut cc: HashMap<&str, usize> = HashMap::new();
    let mut rc: HashMap<&str, usize> = HashMap::new();
    cand.iter().for_each(|w| *cc.entry(w).or_insert(0) += 1);
    reference.iter().for_each(|w| *rc.entry(w).or_insert(0) += 1);
    let matches = cc.iter().map(|(w, &n)| n.min(rc.get(w).copied().unwrap_or(0))).sum();
    if matches == 0 {
        return (0, 0);
    }
    let skips = cc.iter().map(|(w, &n)| (*w, n - n.min(rc.get(w).copied().unwrap_or(0)))).collect();
    let mut a = Aligner { cand, reference, skips, used: vec![false; reference.len()], best: usize::MAX, nodes: 0 };
    a.search(0, None, 0);
    (matches, a.best)
}

pub fn meteor_sentence(cand: &[String], reference: &[String]) -> f64 {
    let (m, chunks) = meteor_alignment(cand, reference);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    fmean * (1.0 - penalty)
}

/// METEOR with exact matching only, max over references, mean over the corpus.
pub fn meteor_lite(pairs: &[EvalPair]) -> f64 {
    mean(pairs.iter().map(|p| p.references.iter().map(|r| meteor_sentence(&p.candidate, r)).fold(0.0, f64::max)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiderScore {
    pub corpus: f64,
    pub per_pair: Vec<f64>,
    /// Fewer than two pairs: every reference n-gram has zero idf.
    pub degenerate_idf: bool,
}

/// CIDEr (no length penalty or clipping), scaled by 10.
pub fn cider(pairs: &[EvalPair]) -> CiderScore {
    let n_docs = pairs.len() as f64;
    let mut per_pair = vec![0.0; pairs.len()];
    for n in 1..=4 {
        let mut df: HashMap<&[String], usize> = HashMap::new();
        for p in pairs {
            let mut seen: Vec<&[String]> = p.references.iter().flat_map(|r| ngrams(r, n).into_keys()).collect();
            seen.sort();
            seen.dedup();
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        let vector = |words: &[String]| -> Vec<(Vec<String>, f64)> {
            let mut v: Vec<(Vec<String>, f64)> = ngrams(words, n)
                .into_iter()
                .map(|(g, c)| {
                    let idf = (n_docs / df.get(g).copied().unwrap_or(0).max(1) as f64).ln();
                    (g.to_vec(), c as f64 * idf)
                })
                .collect();
            v.sort_by(|a, b| a.0.cmp(&b.0));
            v
        };
        for (i, p) in pairs.iter().enumerate() {
            if p.references.is_empty() {
                continue;
            }
            let cv = vector(&p.candidate);
            let sims: f64 = p.references.iter().map(|r| cosine(&cv, &vector(r))).sum();
            per_pair[i] += sims / p.references.len() as f64;
        }
    }
    for s in per_pair.iter_mut() {
        *s = *s / 4.0 * 10.0;
    }
    CiderScore { corpus: mean(per_pair.iter().copied()), per_pair, degenerate_idf: pairs.len() < 2 }
}

fn cosine(a: &[(Vec<String>, f64)], b: &[(Vec<String>, f64)]) -> f64 {
    let norm = |v: &[(Vec<String>, f64)]| v.iter().map(|x| x.1 * x.1).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let lookup: HashMap<&[String], f64> = b.iter().map(|(g, w)| (g.as_slice(), *w)).collect();
    let dot: f64 = a.iter().map(|(g, w)| w * lookup.get(g.as_slice()).copied().unwrap_or(0.0)).sum();
    dot / (na * nb)
}

/// SPIDEr and whether SPICE was missing (in which case it counts as zero).
pub fn spider(cider: f64, spice: Option<f64>) -> (f64, bool) {
    match spice {
        Some(s) => ((s + cider) / 2.0, false),
        None => (cider / 2.0, true),
    }
}

/// Pluggable SPICE backend.
pub trait SpiceScorer {
    fn score(&self, pairs: &[EvalPair]) -> Option<f64>;
}

/// Default scorer: SPICE unavailable.
pub struct NoSpice;

impl SpiceScorer for NoSpice {
    fn score(&self, _: &[EvalPair]) -> Option<f64> {
        None
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub spice: Option<f64>,
    pub spider: f64,
    pub spice_missing: bool,
    pub meteor_lite: bool,
    pub idf_degenerate: bool,
}

impl MetricReport {
    pub const CSV_HEADER: [&'static str; 10] =
        ["BLEU1", "BLEU2", "BLEU3", "BLEU4", "METEOR", "ROUGE_L", "CIDEr", "SPICE", "SPIDEr", "AVG"];

    pub fn compute(pairs: &[EvalPair], spice: &dyn SpiceScorer) -> Self {
        let c = cider(pairs);
        let s = spice.score(pairs);
        let (sp, missing) = spider(c.corpus, s);
        Self {
            bleu1: bleu(pairs, 1),
            bleu2: bleu(pairs, 2),
            bleu3: bleu(pairs, 3),
            bleu4: bleu(pairs, 4),
            meteor: meteor_lite(pairs),
            rouge_l: rouge_l(pairs),
            cider: c.corpus,
            spice: s,
            spider: sp,
            spice_missing: missing,
            meteor_lite: true,
            idf_degenerate: c.degenerate_idf,
        }
    }

    /// Populated metric values in CSV column order.
    pub fn values(&self) -> Vec<f64> {
        let mut v = vec![self.bleu1, self.bleu2, self.bleu3, self.bleu4, self.meteor, self.rouge_l, self.cider];
        v.extend(self.spice);
        v.push(self.spider);
        v
    }

    /// Mean of the populated metrics (SPICE counts only when supplied).
    pub fn average(&self) -> f64 {
        let v = self.values();
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn csv_row(&self) -> Vec<String> {
        let f = |x: f64| format!("{x:.6}");
        let mut row: Vec<String> = [self.bleu1, self.bleu2, self.bleu3, self.bleu4, self.meteor, self.rouge_l, self.cider]
            .into_iter()
            .map(f)
            .collect();
        row.push(self.spice.map(f).unwrap_or_default());
        row.push(f(self.spider));
        row.push(f(self.average()));
        row
    }

    /// Writes a header and one row per labelled report.
    pub fn write_csv<W: Write>(w: W, rows: &[(String, MetricReport)]) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["run"];
        header.extend(Self::CSV_HEADER);
        out.write_record(&header)?;
        for (label, r) in rows {
            let mut rec = vec![label.clone()];
            rec.extend(r.csv_row());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Short text summary including the reporting flags.
    pub fn summary(&self) -> String {
        let mut flags = vec!["meteor-lite"];
        if self.spice_missing {
            flags.push("spice-missing");
        }
        if self.idf_degenerate {
            flags.push("idf-degenerate");
        }
        format!(
            "BLEU1 {:.4} BLEU4 {:.4} METEOR {:.4} ROUGE_L {:.4} CIDEr {:.4} SPIDEr {:.4} AVG {:.4} [{}]",
            self.bleu1,
            self.bleu4,
            self.meteor,
            self.rouge_l,
            self.cider,
            self.spider,
            self.average(),
            flags.join(", ")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub count: usize,
    pub median_len: usize,
    pub max_len: usize,
    pub vocab: usize,
}

/// Word-length statistics with the lower median. `None` for an empty corpus.
pub fn corpus_stats(texts: &[impl AsRef<str>]) -> Option<CorpusStats> {
    if texts.is_empty() {
        return None;
    }
    let mut vocab = std::collections::HashSet::new();
    let mut lens: Vec<usize> = texts
        .iter()
        .map(|t| {
            let words = metric_tokenize(t.as_ref());
            let n = words.len();
            vocab.extend(words);
            n
        })
        .collect();
    lens.sort_unstable();
    Some(CorpusStats { count: lens.len(), median_len: lens[(lens.len() - 1) / 2], max_len: lens[lens.len() - 1], vocab: vocab.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(c: &str, r: &[&str]) -> EvalPair {
        EvalPair::from_text(c, r)
    }

    #[test]
    fn bleu_examples() {
        assert!((bleu(&[pair("the cat sat", &["the cat sat down"])], 1) - (1.0f64 - 4.0 / 3.0).exp()).abs() < 1e-12);
        assert_eq!(bleu(&[pair("a b c d", &["a b c d"])], 4), 1.0);
        assert_eq!(bleu(&[pair("x y", &["a b"])], 1), 0.0);
        assert_eq!(bleu(&[pair("", &["a b"])], 1), 0.0);
    }

    #[test]
    fn rouge_examples() {
        assert!((rouge_l(&[pair("a b c d", &["a c b d"])]) - 0.75).abs() < 1e-12);
        assert_eq!(rouge_l(&[pair("a b", &["a b"])]), 1.0);
        assert_eq!(rouge_l(&[pair("", &["a b"])]), 0.0);
    }

    #[test]
    fn meteor_examples() {
        assert_eq!(meteor_lite(&[pair("b a", &["a b"])]), 0.5);
        assert_eq!(meteor_lite(&[pair("x", &["a b"])]), 0.0);
        let m = 4.0;
        assert!((meteor_lite(&[pair("a b c d", &["a b c d"])]) - (1.0 - 0.5 / (m * m * m))).abs() < 1e-12);
    }

    #[test]
    fn meteor_prefers_fewer_chunks() {
        let w = |s: &str| metric_tokenize(s);
        // greedy leftmost matching would split "the dog" into two chunks
        assert_eq!(meteor_alignment(&w("the dog"), &w("the cat the dog")), (2, 1));
    }

    #[test]
    fn spider_examples() {
        assert!((spider(0.4, Some(0.2)).0 - 0.3).abs() < 1e-12);
        assert_eq!(spider(0.4, None), (0.2, true));
        assert_eq!(spider(0.0, Some(0.0)), (0.0, false));
    }

    #[test]
    fn corpus_stats_examples() {
        let s = corpus_stats(&["a b", "a b c", "a"]).unwrap();
        assert_eq!((s.median_len, s.max_len, s.vocab), (2, 3, 3));
        let s = corpus_stats(&["one two three"]).unwrap();
        assert_eq!((s.median_len, s.max_len), (3, 3));
        let empty: [&str; 0] = [];
        assert!(corpus_stats(&empty).is_none());
    }

    #[test]
    fn single_pair_cider_is_flagged() {
        let c = cider(&[pair("a b", &["a b"])]);
        assert!(c.degenerate_idf);
        assert_eq!(c.corpus, 0.0);
    }
}
