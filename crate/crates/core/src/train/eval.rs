use super::{Result, StreamItem, TrainingData};
use crate::decode::{decode, DecodeConfig, Prefixed};
use crate::metrics::{EvalPair, MetricReport, NoSpice};
use crate::model::Adiff;
use crate::tensor::Scalar;
use crate::text::{Vocab, EOT_ID};

/// Generated ids (ending in end-of-text unless the budget ran out).
pub fn generate<S: Scalar>(model: &Adiff<S>, emb1: &[f32], emb2: &[f32], prompt: &[u32], cfg: &DecodeConfig) -> Result<Vec<u32>> {
    let prefix = model.prefix_tensor(emb1, emb2, prompt)?;
    let lm = Prefixed::new(model, prefix);
    let mut cfg = cfg.clone();
    cfg.max_new = cfg.max_new.min(lm.room());
    Ok(decode(&lm, &cfg)?)
}

pub fn generate_text<S: Scalar>(
    model: &Adiff<S>,
    vocab: &Vocab,
    emb1: &[f32],
    emb2: &[f32],
    prompt: &str,
    cfg: &DecodeConfig,
) -> Result<String> {
    let ids = generate(model, emb1, emb2, &model.prompt_ids(vocab, prompt), cfg)?;
    let body: Vec<u32> = ids.into_iter().take_while(|&t| t != EOT_ID).collect();
    Ok(vocab.decode_text(&body)?)
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub predictions: Vec<String>,
    /// Items whose generated ids equal the target ids exactly.
    pub exact: usize,
    pub report: MetricReport,
}

/// Decodes every difference item and scores it against its target.
pub fn evaluate<S: Scalar>(model: &Adiff<S>, data: &TrainingData, vocab: &Vocab, cfg: &DecodeConfig) -> Result<Evaluation> {
    let mut predictions = Vec::with_capacity(data.diffs.len());
    let mut pairs = Vec::with_capacity(data.diffs.len());
    let mut exact = 0;
    for i in 0..data.diffs.len() {
        let ex = data.example(&StreamItem::Difference(i), model, vocab);
        let ids = generate(model, &ex.emb1, &ex.emb2, &ex.prompt, cfg)?;
        if ids == ex.target {
            exact += 1;
        }
        let body: Vec<u32> = ids.into_iter().take_while(|&t| t != EOT_ID).collect();
        let text = vocab.decode_text(&body)?;
        pairs.push(EvalPair::from_text(&text, &[&data.diffs[i].target]));
        predictions.push(text);
    }
    let report = MetricReport::compute(&pairs, &NoSpice);
    Ok(Evaluation { predictions, exact, report })
}

pub fn exact_match_count<S: Scalar>(model: &Adiff<S>, data: &TrainingData, vocab: &Vocab, max_new: usize) -> Result<usize> {
    Ok(evaluate(model, data, vocab, &DecodeConfig::greedy(max_new))?.exact)
}
