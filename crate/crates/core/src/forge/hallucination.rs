//! Advisory report comparing an explanation with the tagger's event timelines.

use serde::{Deserialize, Serialize};

use crate::audio::EventTimeline;
use crate::text::metric_tokenize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPeak {
    pub class: String,
    pub clip_prob: f32,
    pub peak_prob: f32,
    pub peak_step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlagKind {
    PossibleMiss,
    PossibleHallucination,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flag {
    pub kind: FlagKind,
    pub class: String,
    /// Audios (1 and/or 2) whose top list holds the class; empty for hallucinations.
    pub audios: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HallucinationReport {
    pub audio1: Vec<EventPeak>,
    pub audio2: Vec<EventPeak>,
    pub flags: Vec<Flag>,
}

impl HallucinationReport {
    pub fn count(&self, kind: FlagKind) -> usize {
        self.flags.iter().filter(|f| f.kind == kind).count()
    }
}

fn mentions(words: &[String], class: &str) -> bool {
    let name = metric_tokenize(class);
    !name.is_empty() && words.windows(name.len()).any(|w| w == name.as_slice())
}

fn top(t: &EventTimeline, n: usize) -> Vec<EventPeak> {
    t.top_classes(n)
        .into_iter()
        .map(|c| {
            let (peak_prob, peak_step) = t.peak(c);
            EventPeak { class: t.classes[c].clone(), clip_prob: t.clip[c], peak_prob, peak_step }
        })
        .collect()
}

/// Lists the top-`n` classes of each timeline. A top class missing from the
/// explanation gives one "possible miss" (once per class); a known class named in
/// the explanation but absent from both lists gives a "possible hallucination".
pub fn hallucination_report(explanation: &str, t1: &EventTimeline, t2: &EventTimeline, n: usize) -> HallucinationReport {
    let words = metric_tokenize(explanation);
    let (audio1, audio2) = (top(t1, n), top(t2, n));
    let mut flags = Vec::new();
    let mut listed: Vec<(&str, Vec<u8>)> = Vec::new();
    for (k, peaks) in [(1u8, &audio1), (2u8, &audio2)] {
        for p in peaks.iter() {
            match listed.iter_mut().find(|(c, _)| *c == p.class) {
                Some((_, a)) => a.push(k),
                None => listed.push((&p.class, vec![k])),
            }
        }
    }
    for (class, audios) in &listed {
        if !mentions(&words, class) {
            flags.push(Flag { kind: FlagKind::PossibleMiss, class: class.to_string(), audios: audios.clone() });
        }
    }
    let mut known: Vec<&String> = t1.classes.iter().chain(&t2.classes).collect();
    known.sort();
    known.dedup();
    for class in known {
        if !listed.iter().any(|(c, _)| c == class) && mentions(&words, class) {
            flags.push(Flag { kind: FlagKind::PossibleHallucination, class: class.clone(), audios: Vec::new() });
        }
    }
    HallucinationReport { audio1, audio2, flags }
}
