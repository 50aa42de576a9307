//! Synthetic toy world: procedurally rendered clips with known event classes,
//! templated captions and stub-generated difference explanations.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::synth::{mixture, DEFAULT_CLASSES};
use crate::audio::{AudioClip, AudioError, MelConfig, MelExtractor, MelSpec, Tagger, TaggerConfig, TaggerTrainConfig};
use crate::forge::{self, CaptionRow, DifferenceRecord, LlmClient};
use crate::text::{PromptDb, Tier};

/// Caption phrase per synthetic class. Each phrase contains the class name.
pub const CLASS_PHRASES: [(&str, &str); 16] = [
    ("beep", "sharp electronic beep"),
    ("hum", "low steady hum"),
    ("hiss", "soft noisy hiss"),
    ("rumble", "deep distant rumble"),
    ("whistle", "shrill high whistle"),
    ("chirp", "quick rising chirp"),
    ("siren", "wailing warning siren"),
    ("click", "dry rapid click"),
    ("knock", "hollow wooden knock"),
    ("buzz", "harsh electric buzz"),
    ("whip", "loud cracking whip"),
    ("drone", "dull constant drone"),
    ("tick", "faint regular tick"),
    ("pulse", "throbbing rhythmic pulse"),
    ("bell", "bright ringing bell"),
    ("rain", "gentle falling rain"),
];

pub fn class_phrase(class: &str) -> Option<&'static str> {
    CLASS_PHRASES.iter().find(|(c, _)| *c == class).map(|(_, p)| *p)
}

/// "a sharp electronic beep and a gentle falling rain".
pub fn caption(classes: &[String]) -> String {
    classes
        .iter()
        .map(|c| format!("a {}", class_phrase(c).unwrap_or(c)))
        .collect::<Vec<_>>()
        .join(" and ")
}

#[derive(Debug, Clone)]
pub struct ToyClip {
    pub id: String,
    pub classes: Vec<String>,
    pub caption: String,
    pub audio: AudioClip,
    pub mel: MelSpec,
}

impl ToyClip {
    pub fn caption_row(&self) -> CaptionRow {
        CaptionRow { audio: self.id.clone(), caption: self.caption.clone(), split: "toy".into() }
    }

    /// Multi-hot label vector over `classes`.
    pub fn targets(&self, classes: &[String]) -> Vec<f64> {
        classes.iter().map(|c| if self.classes.contains(c) { 1.0 } else { 0.0 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub classes: Vec<String>,
    pub seconds: f64,
    /// Events per clip are drawn uniformly from `1..=max_events`.
    pub max_events: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { classes: DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(), seconds: 1.0, max_events: 1 }
    }
}

pub fn render(id: &str, classes: &[String], seconds: f64, extractor: &MelExtractor, rng: &mut impl Rng) -> Result<ToyClip, AudioError> {
    let names: Vec<&str> = classes.iter().map(String::as_str).collect();
    let audio = mixture(&names, seconds, rng)?;
    let mel = extractor.extract(&audio)?;
    Ok(ToyClip { id: id.to_string(), classes: classes.to_vec(), caption: caption(classes), audio, mel })
}

/// `n` clips with ids `{prefix}{i:04}`. Single-event clips cycle through the
/// classes so every class is represented.
pub fn generate_clips(n: usize, prefix: &str, cfg: &ToyConfig, seed: u64) -> Result<Vec<ToyClip>, AudioError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extractor = MelExtractor::new(MelConfig::default());
    let mut order: Vec<&String> = Vec::new();
    (0..n)
        .map(|i| {
            let k = rng.random_range(1..=cfg.max_events.max(1)).min(cfg.classes.len());
            let mut classes: Vec<String> = Vec::with_capacity(k);
            while classes.len() < k {
                if order.is_empty() {
                    order = cfg.classes.iter().collect();
                    order.reverse();
                    let len = order.len();
                    for a in (1..len).rev() {
                        order.swap(a, rng.random_range(0..=a));
                    }
                }
                let c = order.pop().expect("refilled");
                if !classes.contains(c) {
                    classes.push(c.clone());
                }
            }
            render(&format!("{prefix}{i:04}"), &classes, cfg.seconds, &extractor, &mut rng)
        })
        .collect()
}

/// Trains a tagger on the clips' planted classes.
pub fn pretrain_tagger(clips: &[ToyClip], config: TaggerConfig, train: TaggerTrainConfig) -> Result<(Tagger, Vec<f64>), AudioError> {
    let mut tagger = Tagger::new(config, train.seed);
    let mels: Vec<MelSpec> = clips.iter().map(|c| c.mel.clone()).collect();
    tagger.fit_normalization(&mels);
    let data: Vec<(MelSpec, Vec<f64>)> = clips.iter().map(|c| (c.mel.clone(), c.targets(tagger.classes()))).collect();
    let curve = tagger.train(&data, train)?;
    Ok((tagger, curve))
}

/// Pairs each clip with a sampled partner holding a different class set.
pub fn sample_pairs(clips: &[ToyClip], seed: u64) -> forge::Result<Vec<(usize, usize)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(clips.len());
    for i in 0..clips.len() {
        let mut j = forge::sample_pair(i, clips.len(), &mut rng)?;
        for _ in 0..32 {
            if clips[j].classes != clips[i].classes {
                break;
            }
            j = forge::sample_pair(i, clips.len(), &mut rng)?;
        }
        out.push((i, j));
    }
    Ok(out)
}

/// Explanation records for the given pairs at one tier.
pub fn explain_pairs(
    clips: &[ToyClip],
    pairs: &[(usize, usize)],
    tier: Tier,
    client: &dyn LlmClient,
    prompts: &PromptDb,
    seed: u64,
) -> forge::Result<Vec<DifferenceRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs
        .iter()
        .map(|&(i, j)| forge::generate_explanation(&clips[i].caption_row(), &clips[j].caption_row(), tier, client, prompts, rng.random()))
        .collect()
}

/// Picks `k` distinct classes at random.
pub fn random_classes(cfg: &ToyConfig, k: usize, rng: &mut impl Rng) -> Vec<String> {
    let pool: Vec<&String> = cfg.classes.iter().collect();
    pool.choose_multiple(rng, k.min(pool.len())).map(|s| s.to_string()).collect()
}
