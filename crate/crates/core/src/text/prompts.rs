use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Result, TextError};

/// Explanation granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Tier {
    One,
    Two,
    Three,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::One, Tier::Two, Tier::Three];

    pub fn number(self) -> u8 {
        match self {
            Tier::One => 1,
            Tier::Two => 2,
            Tier::Three => 3,
        }
    }
}

impl TryFrom<u8> for Tier {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Tier::One),
            2 => Ok(Tier::Two),
            3 => Ok(Tier::Three),
            _ => Err(format!("tier must be 1, 2 or 3, got {v}")),
        }
    }
}

impl From<Tier> for u8 {
    fn from(t: Tier) -> u8 {
        t.number()
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for Tier {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.trim().parse::<u8>().map_err(|e| e.to_string())?.try_into()
    }
}

/// Which prompt list to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PromptKind {
    Tier(Tier),
    First,
    Second,
}

impl PromptKind {
    fn marker(self) -> &'static str {
        match self {
            PromptKind::Tier(Tier::One) => "tier1",
            PromptKind::Tier(Tier::Two) => "tier2",
            PromptKind::Tier(Tier::Three) => "tier3",
            PromptKind::First => "first",
            PromptKind::Second => "second",
        }
    }
}

impl FromStr for PromptKind {
    type Err = TextError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "tier1" | "1" => Ok(PromptKind::Tier(Tier::One)),
            "tier2" | "2" => Ok(PromptKind::Tier(Tier::Two)),
            "tier3" | "3" => Ok(PromptKind::Tier(Tier::Three)),
            "first" => Ok(PromptKind::First),
            "second" => Ok(PromptKind::Second),
            other => Err(TextError::UnknownKind(other.to_string())),
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.marker())
    }
}

const TIER1_SEED: [&str; 3] = [
    "Summarize the differences between the two audios briefly.",
    "Highlight the main differences between the two audio tracks.",
    "Provide a concise comparison of the two audios.",
];
const TIER2_SEED: [&str; 3] = [
    "Explain the contrast between the two audio pieces in one long sentence.",
    "In one elaborate sentence, summarize the differences between both audio files.",
    "Describe the variation between the two audio tracks in one extended sentence.",
];
const TIER3_SEED: [&str; 3] = [
    "Explain the difference between both audios in detail.",
    "Could you elaborate on the distinctions between the two audio tracks?",
    "Please provide a detailed comparison of both audio files.",
];

const OBJECTS: [&str; 6] = [
    "the two audios",
    "the two audio tracks",
    "both audio files",
    "the two recordings",
    "both clips",
    "the pair of audio clips",
];

fn padded(seed: &[&str], verbs: &[&str], suffixes: &[&str], target: usize) -> Vec<String> {
    let mut out: Vec<String> = seed.iter().map(|s| s.to_string()).collect();
    'fill: for suffix in suffixes {
        for verb in verbs {
            for obj in OBJECTS {
                if out.len() >= target {
                    break 'fill;
                }
                let p = format!("{verb} {obj}{suffix}");
                if !out.contains(&p) {
                    out.push(p);
                }
            }
        }
    }
    out
}

/// Prompt lists per tier and per captioning position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptDb {
    lists: BTreeMap<PromptKind, Vec<String>>,
}

impl Default for PromptDb {
    /// Published sample prompts plus templated paraphrases, 100 per tier.
    fn default() -> Self {
        let mut lists = BTreeMap::new();
        lists.insert(
            PromptKind::Tier(Tier::One),
            padded(
                &TIER1_SEED,
                &["Summarize the differences between", "Briefly compare", "Give a short comparison of", "List the key differences between"],
                &[" briefly.", " in a few words.", " concisely.", " in one short sentence.", "."],
                100,
            ),
        );
        lists.insert(
            PromptKind::Tier(Tier::Two),
            padded(
                &TIER2_SEED,
                &["In one long sentence, explain how", "Using a single extended sentence, describe how", "In one elaborate sentence, contrast", "Write one detailed sentence comparing"],
                &[", including the order of the sounds.", ", covering the sound sources.", ", noting what happens first and next.", " and their sound events.", "."],
                100,
            ),
        );
        lists.insert(
            PromptKind::Tier(Tier::Three),
            padded(
                &TIER3_SEED,
                &["Explain in detail the difference between", "Write a detailed paragraph comparing", "Thoroughly describe how", "Give an in-depth comparison of"],
                &[" in detail.", ", including their sonic qualities.", ", covering sources, acoustics and how they feel to a listener.", " in a full paragraph.", "."],
                100,
            ),
        );
        lists.insert(
            PromptKind::First,
            vec!["caption the first audio".into(), "describe the first audio".into(), "what is heard in the first audio".into()],
        );
        lists.insert(
            PromptKind::Second,
            vec!["caption the second audio".into(), "describe the second audio".into(), "what is heard in the second audio".into()],
        );
        Self { lists }
    }
}

impl PromptDb {
    pub fn empty() -> Self {
        Self { lists: BTreeMap::new() }
    }

    pub fn insert(&mut self, kind: PromptKind, prompts: Vec<String>) {
        self.lists.insert(kind, prompts);
    }

    pub fn list(&self, kind: PromptKind) -> &[String] {
        self.lists.get(&kind).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Uniform draw from one list.
    pub fn sample<R: Rng + ?Sized>(&self, kind: PromptKind, rng: &mut R) -> Result<&str> {
        let list = self.list(kind);
        if list.is_empty() {
            return Err(TextError::NoPrompts(kind.to_string()));
        }
        Ok(&list[rng.random_range(0..list.len())])
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (kind, list) in &self.lists {
            s.push_str(&format!("[{}]\n", kind.marker()));
            for p in list {
                s.push_str(p);
                s.push('\n');
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lists: BTreeMap<PromptKind, Vec<String>> = BTreeMap::new();
        let mut current = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if let Some(marker) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let kind: PromptKind = marker.parse()?;
                lists.entry(kind).or_default();
                current = Some(kind);
            } else if !line.trim().is_empty() {
                let kind = current.ok_or_else(|| TextError::Parse { line: i + 1, msg: "prompt before any marker".into() })?;
                lists.entry(kind).or_default().push(line.to_string());
            }
        }
        if let Some((kind, _)) = lists.iter().find(|(_, l)| l.is_empty()) {
            return Err(TextError::NoPrompts(kind.to_string()));
        }
        Ok(Self { lists })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn default_lists_are_large_and_distinct() {
        let db = PromptDb::default();
        for tier in Tier::ALL {
            let list = db.list(PromptKind::Tier(tier));
            assert!(list.len() >= 100);
            assert_eq!(list.iter().collect::<HashSet<_>>().len(), list.len());
        }
        assert!(db.list(PromptKind::Tier(Tier::One)).iter().any(|p| p == TIER1_SEED[0]));
    }

    #[test]
    fn single_entry_always_returned() {
        let mut db = PromptDb::empty();
        db.insert(PromptKind::First, vec!["only".into()]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(db.sample(PromptKind::First, &mut rng).unwrap(), "only");
        }
        assert!(db.sample(PromptKind::Second, &mut rng).is_err());
        assert!("tier4".parse::<PromptKind>().is_err());
    }

    #[test]
    fn file_round_trip() {
        let db = PromptDb::default();
        assert_eq!(PromptDb::from_text(&db.to_text()).unwrap(), db);
        assert!(PromptDb::from_text("orphan\n").is_err());
        assert!(PromptDb::from_text("[tier1]\n").is_err());
    }

    #[test]
    fn tier_serde_is_numeric() {
        assert_eq!(serde_json::to_string(&Tier::Three).unwrap(), "3");
        assert!(serde_json::from_str::<Tier>("4").is_err());
    }
}
