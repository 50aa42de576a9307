//! Byte-level BPE, the tiered prompt database and metric-side tokenisation.

mod bpe;
mod prompts;

pub use bpe::{Vocab, END_OF_TEXT, EOT_ID, PAD, PAD_ID};
pub use prompts::{PromptDb, PromptKind, Tier};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("vocab size {0} is below the byte alphabet plus specials ({1})")]
    VocabTooSmall(usize, usize),
    #[error("token id {id} out of range for vocabulary of {size}")]
    TokenRange { id: u32, size: usize },
    #[error("vocab file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no prompts for {0}")]
    NoPrompts(String),
    #[error("unknown tier or position {0:?}")]
    UnknownKind(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TextError>;

/// Lowercases, drops punctuation and splits on whitespace.
pub fn metric_tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_tokenize_examples() {
        assert_eq!(metric_tokenize("A Dog, barking!"), vec!["a", "dog", "barking"]);
        assert!(metric_tokenize("").is_empty());
        let t = metric_tokenize("Hello -- World's  END.");
        assert_eq!(metric_tokenize(&t.join(" ")), t);
    }
}
