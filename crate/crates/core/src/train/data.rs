use rand::seq::SliceRandom;
use rand::Rng;

use super::{Result, TrainError};
use crate::model::{Adiff, Example};
use crate::tensor::Scalar;
use crate::text::{PromptDb, PromptKind, Vocab};

/// One explanation target over two clips.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffItem {
    pub audio1: usize,
    pub audio2: usize,
    pub prompt: String,
    pub target: String,
}

/// Cached encoder embeddings and captions per clip, plus difference items over them.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub embeddings: Vec<Vec<f32>>,
    pub captions: Vec<String>,
    pub diffs: Vec<DiffItem>,
    pub prompts: PromptDb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    First,
    Second,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StreamItem {
    Difference(usize),
    /// Caption the clip in slot `position`; the other slot holds a distractor.
    Caption { audio1: usize, audio2: usize, position: Position, prompt: String },
}

impl StreamItem {
    pub fn is_caption(&self) -> bool {
        matches!(self, StreamItem::Caption { .. })
    }

    /// Clip whose caption is the target of a caption item.
    pub fn captioned(&self) -> Option<usize> {
        match *self {
            StreamItem::Caption { audio1, position: Position::First, .. } => Some(audio1),
            StreamItem::Caption { audio2, position: Position::Second, .. } => Some(audio2),
            StreamItem::Difference(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingStream {
    pub items: Vec<StreamItem>,
    pub ratio: f64,
}

impl TrainingStream {
    pub fn caption_fraction(&self) -> f64 {
        if self.items.is_empty() {
            return 0.0;
        }
        self.items.iter().filter(|i| i.is_caption()).count() as f64 / self.items.len() as f64
    }
}

impl TrainingData {
    pub fn clip_count(&self) -> usize {
        self.embeddings.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.captions.len() != self.embeddings.len() {
            return Err(TrainError::Data(format!(
                "{} captions for {} clips",
                self.captions.len(),
                self.embeddings.len()
            )));
        }
        let n = self.embeddings.len();
        if let Some(d) = self.diffs.iter().find(|d| d.audio1 >= n || d.audio2 >= n) {
            return Err(TrainError::Data(format!("difference item ({}, {}) outside {n} clips", d.audio1, d.audio2)));
        }
        Ok(())
    }

    /// Items per epoch so that the difference items are each seen about once.
    pub fn epoch_len(&self, ratio: f64) -> usize {
        if self.diffs.is_empty() || ratio >= 1.0 {
            return self.clip_count();
        }
        (self.diffs.len() as f64 / (1.0 - ratio)).ceil() as usize
    }

    pub fn target_text(&self, item: &StreamItem) -> &str {
        match item {
            StreamItem::Difference(i) => &self.diffs[*i].target,
            StreamItem::Caption { .. } => &self.captions[item.captioned().expect("caption item")],
        }
    }

    pub fn example<S: Scalar>(&self, item: &StreamItem, model: &Adiff<S>, vocab: &Vocab) -> Example {
        let (a1, a2, prompt) = match item {
            StreamItem::Difference(i) => {
                let d = &self.diffs[*i];
                (d.audio1, d.audio2, d.prompt.as_str())
            }
            StreamItem::Caption { audio1, audio2, prompt, .. } => (*audio1, *audio2, prompt.as_str()),
        };
        Example {
            emb1: self.embeddings[a1].clone(),
            emb2: self.embeddings[a2].clone(),
            prompt: model.prompt_ids(vocab, prompt),
            target: model.target_ids(vocab, self.target_text(item)),
        }
    }
}

/// `len` items; each is a position-caption item with probability `ratio`, otherwise
/// the next difference item from a shuffled cycle.
pub fn mix_position_captioning(data: &TrainingData, ratio: f64, len: usize, rng: &mut impl Rng) -> Result<TrainingStream> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(TrainError::Ratio(ratio));
    }
    let clips = data.clip_count();
    if ratio > 0.0 && (data.captions.is_empty() || clips < 2) {
        return Err(TrainError::Data("position captioning needs captions for at least two clips".into()));
    }
    if ratio < 1.0 && data.diffs.is_empty() {
        return Err(TrainError::Data("no difference items".into()));
    }
    let mut cycle: Vec<usize> = Vec::new();
    let mut items = Vec::with_capacity(len);
    for _ in 0..len {
        if ratio > 0.0 && rng.random_bool(ratio) {
            let own = rng.random_range(0..clips);
            let other = (own + rng.random_range(1..clips)) % clips;
            let position = if rng.random_bool(0.5) { Position::First } else { Position::Second };
            let kind = match position {
                Position::First => PromptKind::First,
                Position::Second => PromptKind::Second,
            };
            let prompt = data.prompts.sample(kind, rng)?.to_string();
            let (audio1, audio2) = match position {
                Position::First => (own, other),
                Position::Second => (other, own),
            };
            items.push(StreamItem::Caption { audio1, audio2, position, prompt });
        } else {
            if cycle.is_empty() {
                cycle = (0..data.diffs.len()).collect();
                cycle.shuffle(rng);
            }
            items.push(StreamItem::Difference(cycle.pop().expect("refilled")));
        }
    }
    Ok(TrainingStream { items, ratio })
}
