//! Difference-dataset construction: caption flattening, pair sampling, LLM
//! explanation generation, verification bookkeeping and corpus analytics.

mod hallucination;
mod llm;

pub use hallucination::{hallucination_report, EventPeak, Flag, FlagKind, HallucinationReport};
pub use llm::{parse_json_body, HttpClient, LlmClient, LlmRequest, LlmResponse, RequestKind, StubClient};

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::{DENSITY_RUBRIC, GENERATION_SYSTEM_PROMPT};
use crate::text::{metric_tokenize, PromptDb, PromptKind, TextError, Tier};

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("caption table is missing column {0:?}")]
    MissingColumn(String),
    #[error("pair sampling needs at least 6 items, got {0}")]
    TooFewItems(usize),
    #[error("index {index} out of range for {n} items")]
    Index { index: usize, n: usize },
    #[error("LLM client: {0}")]
    Client(String),
    #[error("LLM request failed after {attempts} attempts: {message}")]
    Exhausted { attempts: usize, message: String, request: Box<LlmRequest> },
    #[error("density score {0} outside 1..=5")]
    ScoreRange(i64),
    #[error("approver id must not be empty")]
    EmptyApprover,
    #[error("record line {line}: {msg}")]
    Record { line: usize, msg: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ForgeError>;

/// Attempts per LLM call before giving up.
pub const LLM_ATTEMPTS: usize = 3;

pub(crate) const CAPTION1_LABEL: &str = "Audio 1 caption:";
pub(crate) const CAPTION2_LABEL: &str = "Audio 2 caption:";
pub(crate) const EXPLANATION_LABEL: &str = "Explanation:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRow {
    pub audio: String,
    pub caption: String,
    pub split: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Flattened {
    pub rows: Vec<CaptionRow>,
    /// Empty caption cells skipped.
    pub rejected: usize,
}

/// One row per (audio, caption) from a CSV with `file_name` and either `caption`
/// or numbered `caption_1..caption_k` columns. An audio's captions stay consecutive.
pub fn flatten_captions<R: Read>(reader: R, split: &str) -> Result<Flattened> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let file_col = headers
        .iter()
        .position(|h| h.trim() == "file_name")
        .ok_or_else(|| ForgeError::MissingColumn("file_name".into()))?;
    let mut caption_cols: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            let h = h.trim();
            if h == "caption" {
                Some((0, i))
            } else {
                h.strip_prefix("caption_").and_then(|n| n.parse().ok()).map(|n| (n, i))
            }
        })
        .collect();
    if caption_cols.is_empty() {
        return Err(ForgeError::MissingColumn("caption".into()));
    }
    caption_cols.sort_unstable();
    let mut out = Flattened { rows: Vec::new(), rejected: 0 };
    for rec in rdr.records() {
        let rec = rec?;
        let audio = rec.get(file_col).unwrap_or("").trim().to_string();
        for &(_, col) in &caption_cols {
            let caption = rec.get(col).unwrap_or("").trim();
            if caption.is_empty() || audio.is_empty() {
                out.rejected += 1;
                continue;
            }
            out.rows.push(CaptionRow { audio: audio.clone(), caption: caption.to_string(), split: split.to_string() });
        }
    }
    if out.rejected > 0 {
        log::warn!("{} empty caption cells skipped", out.rejected);
    }
    Ok(out)
}

/// Partner index for `i`, uniform over `[0, n)` minus `{i, .., i+4} mod n`.
pub fn sample_pair<R: Rng + ?Sized>(i: usize, n: usize, rng: &mut R) -> Result<usize> {
    if n < 6 {
        return Err(ForgeError::TooFewItems(n));
    }
    if i >= n {
        return Err(ForgeError::Index { index: i, n });
    }
    Ok((i + 5 + rng.random_range(0..n - 5)) % n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    LlmGenerated,
    HumanVerified,
}

/// One verification step. An approval has no removals and no added text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub approver: String,
    #[serde(default)]
    pub removed: Vec<String>,
    #[serde(default)]
    pub added: String,
    /// Explanation text before this edit.
    pub before: String,
}

impl Edit {
    pub fn is_approval(&self) -> bool {
        self.removed.is_empty() && self.added.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifferenceRecord {
    pub audio1: String,
    pub audio2: String,
    pub tier: Tier,
    pub prompt: String,
    pub explanation: String,
    pub provenance: Provenance,
    #[serde(default)]
    pub edits: Vec<Edit>,
}

impl DifferenceRecord {
    /// Text as first generated, before any edit.
    pub fn original(&self) -> &str {
        self.edits.first().map_or(&self.explanation, |e| &e.before)
    }
}

/// Length and source restriction appended to a generation request.
pub fn tier_instruction(tier: Tier) -> &'static str {
    match tier {
        Tier::One => {
            "Write one or two short sentences. Mention only the main sound events of each audio and how they differ. Use only the captions."
        }
        Tier::Two => {
            "Write three to five sentences. Describe which sound events occur in each audio and in what order, then contrast the two sequences. Use only the captions."
        }
        Tier::Three => {
            "Write a detailed paragraph. Cover the sound events, their order, and the acoustic character of each audio such as pitch, loudness, timbre, distance and reverberation, then contrast the two. You may use general knowledge about how such sources sound."
        }
    }
}

pub fn generation_request(a: &CaptionRow, b: &CaptionRow, tier: Tier) -> LlmRequest {
    LlmRequest {
        system: GENERATION_SYSTEM_PROMPT.trim().to_string(),
        user: format!(
            "{CAPTION1_LABEL} {}\n{CAPTION2_LABEL} {}\nExplain the difference between the two audios. {}",
            a.caption,
            b.caption,
            tier_instruction(tier)
        ),
        kind: RequestKind::Explanation(tier),
        json: false,
    }
}

fn with_retries(client: &dyn LlmClient, req: &LlmRequest, mut accept: impl FnMut(&LlmResponse) -> Result<()>) -> Result<LlmResponse> {
    let mut last = String::new();
    for attempt in 1..=LLM_ATTEMPTS {
        match client.complete(req).and_then(|r| accept(&r).map(|_| r)) {
            Ok(r) => return Ok(r),
            Err(e @ ForgeError::ScoreRange(_)) => return Err(e),
            Err(e) => {
                log::warn!("LLM attempt {attempt}/{LLM_ATTEMPTS} failed: {e}");
                last = e.to_string();
            }
        }
    }
    Err(ForgeError::Exhausted { attempts: LLM_ATTEMPTS, message: last, request: Box::new(req.clone()) })
}

/// Generates one explanation record. The user prompt stored with it is drawn
/// from `prompts` for `tier` using `seed`.
pub fn generate_explanation(
    a: &CaptionRow,
    b: &CaptionRow,
    tier: Tier,
    client: &dyn LlmClient,
    prompts: &PromptDb,
    seed: u64,
) -> Result<DifferenceRecord> {
    if a.audio == b.audio {
        return Err(ForgeError::Config(format!("pair uses the same audio {}", a.audio)));
    }
    let req = generation_request(a, b, tier);
    let resp = with_retries(client, &req, |r| {
        if r.raw.trim().is_empty() {
            Err(ForgeError::Client("empty reply".into()))
        } else {
            Ok(())
        }
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(DifferenceRecord {
        audio1: a.audio.clone(),
        audio2: b.audio.clone(),
        tier,
        prompt: prompts.sample(PromptKind::Tier(tier), &mut rng)?.to_string(),
        explanation: resp.raw.trim().to_string(),
        provenance: Provenance::LlmGenerated,
        edits: Vec::new(),
    })
}

/// Pairs every row with a sampled partner and generates an explanation per tier.
pub fn generate_dataset(
    rows: &[CaptionRow],
    tiers: &[Tier],
    client: &dyn LlmClient,
    prompts: &PromptDb,
    seed: u64,
) -> Result<Vec<DifferenceRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(rows.len() * tiers.len());
    for i in 0..rows.len() {
        let j = sample_pair(i, rows.len(), &mut rng)?;
        if rows[i].audio == rows[j].audio {
            log::warn!("skipping pair ({i}, {j}): same audio {}", rows[i].audio);
            continue;
        }
        for &tier in tiers {
            out.push(generate_explanation(&rows[i], &rows[j], tier, client, prompts, rng.random())?);
        }
    }
    Ok(out)
}

/// Human verification: remove spans, append text, record the approver.
pub fn apply_verification(record: &DifferenceRecord, removed: &[&str], added: &str, approver: &str) -> Result<DifferenceRecord> {
    if approver.trim().is_empty() {
        return Err(ForgeError::EmptyApprover);
    }
    let mut text = record.explanation.clone();
    for span in removed.iter().filter(|s| !s.is_empty()) {
        text = text.replace(span, "");
    }
    let added = added.trim();
    if !added.is_empty() {
        if !text.trim().is_empty() {
            text = text.trim_end().to_string();
            text.push(' ');
        }
        text.push_str(added);
    }
    let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut out = record.clone();
    out.edits.push(Edit {
        approver: approver.to_string(),
        removed: removed.iter().filter(|s| !s.is_empty()).map(|s| s.to_string()).collect(),
        added: added.to_string(),
        before: record.explanation.clone(),
    });
    if !out.edits.last().is_some_and(Edit::is_approval) {
        out.explanation = text;
    }
    out.provenance = Provenance::HumanVerified;
    Ok(out)
}

pub fn density_request(explanation: &str) -> LlmRequest {
    LlmRequest {
        system: DENSITY_RUBRIC.trim().to_string(),
        user: format!("{EXPLANATION_LABEL} {explanation}"),
        kind: RequestKind::Density,
        json: true,
    }
}

/// Information-density judgement in 1..=5.
pub fn density_score(record: &DifferenceRecord, client: &dyn LlmClient) -> Result<u8> {
    let req = density_request(&record.explanation);
    let mut score = 0i64;
    with_retries(client, &req, |r| {
        let body = r.parsed.clone().or_else(|| parse_json_body(&r.raw));
        let s = body
            .as_ref()
            .and_then(|v| v.get("score"))
            .and_then(|v| v.as_i64().or_else(|| v.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)))
            .ok_or_else(|| ForgeError::Client(format!("no integer score in {:?}", r.raw)))?;
        if !(1..=5).contains(&s) {
            return Err(ForgeError::ScoreRange(s));
        }
        score = s;
        Ok(())
    })?;
    Ok(score as u8)
}

pub fn write_records<W: Write>(mut w: W, records: &[DifferenceRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<DifferenceRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ForgeError::Record { line: i + 1, msg: e.to_string() })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntropyLevel {
    Character,
    Word,
}

/// Unigram Shannon entropy in bits over the whole corpus.
pub fn corpus_entropy(texts: &[impl AsRef<str>], level: EntropyLevel) -> Result<f64> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for t in texts {
        match level {
            EntropyLevel::Character => t.as_ref().chars().for_each(|c| *counts.entry(c.to_string()).or_default() += 1),
            EntropyLevel::Word => metric_tokenize(t.as_ref()).into_iter().for_each(|w| *counts.entry(w).or_default() += 1),
        }
    }
    let total: u64 = counts.values().sum();
    if total == 0 {
        return Err(ForgeError::EmptyCorpus);
    }
    let mut c: Vec<u64> = counts.into_values().collect();
    c.sort_unstable();
    let h = c
        .iter()
        .map(|&n| {
            let p = n as f64 / total as f64;
            -p * p.log2()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_closed_forms() {
        assert_eq!(corpus_entropy(&["aaaa"], EntropyLevel::Character).unwrap(), 0.0);
        assert_eq!(corpus_entropy(&["abab"], EntropyLevel::Character).unwrap(), 1.0);
        assert_eq!(corpus_entropy(&["the cat the dog"], EntropyLevel::Word).unwrap(), 1.5);
        assert!(corpus_entropy(&[""], EntropyLevel::Word).is_err());
    }

    #[test]
    fn forced_partners() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_pair(0, 6, &mut rng).unwrap(), 5);
        assert_eq!(sample_pair(4, 6, &mut rng).unwrap(), 3);
        assert!(sample_pair(0, 5, &mut rng).is_err());
        assert!(sample_pair(6, 6, &mut rng).is_err());
    }

    #[test]
    fn flatten_numbered_captions() {
        let csv = "file_name,caption_1,caption_2,caption_3,caption_4,caption_5\n\
                   a.wav,c1,c2,c3,c4,c5\n\
                   b.wav,d1,d2,,d4,d5\n";
        let f = flatten_captions(csv.as_bytes(), "train").unwrap();
        assert_eq!(f.rows.len(), 9);
        assert_eq!(f.rejected, 1);
        assert!(f.rows[..5].iter().all(|r| r.audio == "a.wav"));
        assert_eq!(f.rows[4].caption, "c5");
    }

    #[test]
    fn flatten_single_caption_and_missing_columns() {
        let f = flatten_captions("file_name,caption\nx.wav,rain\ny.wav,dog\n".as_bytes(), "val").unwrap();
        assert_eq!(f.rows.len(), 2);
        assert!(matches!(flatten_captions("name,caption\n".as_bytes(), "t"), Err(ForgeError::MissingColumn(_))));
        assert!(matches!(flatten_captions("file_name,text\n".as_bytes(), "t"), Err(ForgeError::MissingColumn(_))));
    }
}
