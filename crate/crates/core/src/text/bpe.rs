use std::collections::HashMap;
use std::fmt::Write as _;

use super::{Result, TextError};

pub const END_OF_TEXT: &str = "<|endoftext|>";
pub const PAD: &str = "<|pad|>";
pub const EOT_ID: u32 = 256;
pub const PAD_ID: u32 = 257;
const FIRST_MERGE: u32 = 258;
const HEADER: &str = "#adiff-bpe v1";

/// Byte-level BPE vocabulary: 256 byte tokens, two specials, then merges in rank order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    merges: Vec<(u32, u32)>,
    ranks: HashMap<(u32, u32), u32>,
    pieces: Vec<Vec<u8>>,
}

/// Splits bytes into chunks that start at each space following a non-space byte.
fn chunks(bytes: &[u8]) -> Vec<&[u8]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..bytes.len() {
        if bytes[i] == b' ' && bytes[i - 1] != b' ' {
            out.push(&bytes[start..i]);
            start = i;
        }
    }
    if start < bytes.len() {
        out.push(&bytes[start..]);
    }
    out
}

impl Vocab {
    /// Pure byte tokenizer with no merges.
    pub fn bytes_only() -> Self {
        Self::from_merges(Vec::new()).expect("no merges")
    }

    fn from_merges(merges: Vec<(u32, u32)>) -> Result<Self> {
        let mut pieces: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        pieces.push(END_OF_TEXT.as_bytes().to_vec());
        pieces.push(PAD.as_bytes().to_vec());
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, &(a, b)) in merges.iter().enumerate() {
            let id = FIRST_MERGE + rank as u32;
            for t in [a, b] {
                if t >= id || t == EOT_ID || t == PAD_ID {
                    return Err(TextError::Parse { line: rank + 1, msg: format!("merge refers to token {t}") });
                }
            }
            let mut piece = pieces[a as usize].clone();
            piece.extend_from_slice(&pieces[b as usize]);
            pieces.push(piece);
            ranks.insert((a, b), rank as u32);
        }
        Ok(Self { merges, ranks, pieces })
    }

    /// Learns merges greedily by pair frequency until `vocab_size` is reached or no
    /// pair remains. Ties go to the lexicographically smallest pair of byte strings.
    pub fn train<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<Self> {
        let min = FIRST_MERGE as usize;
        if vocab_size < min {
            return Err(TextError::VocabTooSmall(vocab_size, min));
        }
        if corpus.iter().all(|l| l.as_ref().is_empty()) {
            return Err(TextError::EmptyCorpus);
        }
        let mut counts: HashMap<&[u8], usize> = HashMap::new();
        for line in corpus {
            for c in chunks(line.as_ref().as_bytes()) {
                *counts.entry(c).or_default() += 1;
            }
        }
        let mut words: Vec<(Vec<u32>, usize)> =
            counts.into_iter().map(|(w, n)| (w.iter().map(|&b| b as u32).collect(), n)).collect();
        words.sort();

        let mut vocab = Self::bytes_only();
        while vocab.pieces.len() < vocab_size {
            let mut pairs: HashMap<(u32, u32), usize> = HashMap::new();
            for (w, n) in &words {
                for p in w.windows(2) {
                    *pairs.entry((p[0], p[1])).or_default() += n;
                }
            }
            let best = pairs.into_iter().max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb).then_with(|| {
                    let ka = (&vocab.pieces[pa.0 as usize], &vocab.pieces[pa.1 as usize]);
                    let kb = (&vocab.pieces[pb.0 as usize], &vocab.pieces[pb.1 as usize]);
                    kb.cmp(&ka).then_with(|| pb.cmp(pa))
                })
            });
            let Some(((a, b), _)) = best else { break };
            let id = vocab.pieces.len() as u32;
            let mut piece = vocab.pieces[a as usize].clone();
            piece.extend_from_slice(&vocab.pieces[b as usize]);
            vocab.pieces.push(piece);
            vocab.ranks.insert((a, b), vocab.merges.len() as u32);
            vocab.merges.push((a, b));
            for (w, _) in &mut words {
                merge_in_place(w, a, b, id);
            }
        }
        Ok(vocab)
    }

    pub fn size(&self) -> usize {
        self.pieces.len()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn piece(&self, id: u32) -> Option<&[u8]> {
        self.pieces.get(id as usize).map(Vec::as_slice)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.encode_bytes(text.as_bytes())
    }

    pub fn encode_bytes(&self, bytes: &[u8]) -> Vec<u32> {
        let mut out = Vec::with_capacity(bytes.len());
        for chunk in chunks(bytes) {
            let mut w: Vec<u32> = chunk.iter().map(|&b| b as u32).collect();
            loop {
                let best = w
                    .windows(2)
                    .filter_map(|p| self.ranks.get(&(p[0], p[1])).map(|&r| (r, p[0], p[1])))
                    .min();
                let Some((rank, a, b)) = best else { break };
                merge_in_place(&mut w, a, b, FIRST_MERGE + rank);
            }
            out.extend(w);
        }
        out
    }

    pub fn decode_bytes(&self, tokens: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &t in tokens {
            let piece = self.piece(t).ok_or(TextError::TokenRange { id: t, size: self.size() })?;
            out.extend_from_slice(piece);
        }
        Ok(out)
    }

    pub fn decode(&self, tokens: &[u32]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(tokens)?).into_owned())
    }

    /// Decodes, dropping special tokens.
    pub fn decode_text(&self, tokens: &[u32]) -> Result<String> {
        let kept: Vec<u32> = tokens.iter().copied().filter(|&t| t != EOT_ID && t != PAD_ID).collect();
        self.decode(&kept)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{HEADER}");
        let _ = writeln!(s, "#special {EOT_ID} {END_OF_TEXT}");
        let _ = writeln!(s, "#special {PAD_ID} {PAD}");
        for (a, b) in &self.merges {
            let _ = writeln!(s, "{a} {b}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut merges = Vec::new();
        let mut saw_header = false;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line == HEADER {
                saw_header = true;
                continue;
            }
            if let Some(rest) = line.strip_prefix("#special ") {
                let (id, name) = rest.split_once(' ').unwrap_or((rest, ""));
                let ok = matches!((id, name), ("256", END_OF_TEXT) | ("257", PAD));
                if !ok {
                    return Err(TextError::Parse { line: line_no, msg: format!("unexpected special {rest:?}") });
                }
                continue;
            }
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let parse = |s: Option<&str>| -> Result<u32> {
                s.and_then(|v| v.parse().ok())
                    .ok_or_else(|| TextError::Parse { line: line_no, msg: format!("bad merge {line:?}") })
            };
            let mut parts = line.split_whitespace();
            merges.push((parse(parts.next())?, parse(parts.next())?));
        }
        if !saw_header {
            return Err(TextError::Parse { line: 1, msg: "missing header".into() });
        }
        Self::from_merges(merges)
    }
}

fn merge_in_place(w: &mut Vec<u32>, a: u32, b: u32, id: u32) {
    let mut i = 0;
    let mut out = 0;
    while i < w.len() {
        if i + 1 < w.len() && w[i] == a && w[i + 1] == b {
            w[out] = id;
            i += 2;
        } else {
            w[out] = w[i];
            i += 1;
        }
        out += 1;
    }
    w.truncate(out);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_merge_is_most_frequent_pair() {
        let v = Vocab::train(&["aaaa aaaa"], 260).unwrap();
        assert_eq!(v.merges()[0], (b'a' as u32, b'a' as u32));
        assert_eq!(v.size(), 260);
    }

    #[test]
    fn minimal_size_is_pure_bytes() {
        let v = Vocab::train(&["hello world"], 258).unwrap();
        assert!(v.merges().is_empty());
        assert_eq!(v.encode("hi"), vec![104, 105]);
        assert!(matches!(Vocab::train(&["x"], 100), Err(TextError::VocabTooSmall(..))));
        assert!(matches!(Vocab::train::<&str>(&[], 300), Err(TextError::EmptyCorpus)));
    }

    #[test]
    fn chunking_covers_every_byte() {
        let text = b"  the cat  sat ";
        assert_eq!(chunks(text).concat(), text.to_vec());
        assert!(chunks(b"").is_empty());
    }

    #[test]
    fn decode_rejects_out_of_range() {
        let v = Vocab::bytes_only();
        assert!(matches!(v.decode(&[258]), Err(TextError::TokenRange { .. })));
        assert_eq!(v.decode(&[EOT_ID]).unwrap(), END_OF_TEXT);
        assert_eq!(v.decode_text(&[104, EOT_ID, 105]).unwrap(), "hi");
    }

    #[test]
    fn text_round_trip() {
        let v = Vocab::train(&["the cat sat on the mat", "the dog sat"], 300).unwrap();
        let back = Vocab::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert!(Vocab::from_text("1 2\n").is_err());
    }
}
