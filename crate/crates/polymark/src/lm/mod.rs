//! Vocabulary, token types, and the language-model interface.

mod sampling;
mod toy;

pub use sampling::{generate, sample_multinomial, softmax};
pub use toy::ToyLm;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Token identifier: an index into a [`Vocabulary`].
pub type TokenId = u32;

/// Conventional id for the beginning-of-sequence token in the bundled
/// fixtures. Engines take the pad id as configuration; this is only the
/// default.
pub const DEFAULT_BOS: TokenId = 0;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("vocabulary needs at least 2 tokens, got {0}")]
    VocabularyTooSmall(usize),
    #[error("duplicate token {0:?} in vocabulary")]
    DuplicateToken(String),
    #[error("vocabulary line {line}: {msg}")]
    VocabularyParse { line: usize, msg: String },
    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: TokenId, size: usize },
    #[error("logit at index {index} is not finite ({value})")]
    NonFiniteLogit { index: usize, value: f64 },
    #[error("empty logits vector")]
    EmptyLogits,
    #[error("probabilities must be non-negative with a positive finite sum")]
    InvalidProbabilities,
    #[error("prompt must contain at least one token")]
    EmptyPrompt,
    #[error("watermark engine failed")]
    Engine(#[from] crate::watermark::WatermarkError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Token inventory shared by models, engines, translators, and embedders.
///
/// Each token is a unique string with an optional language tag. Ids are dense
/// and assigned in insertion order, so a vocabulary file defines them stably.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    languages: Vec<Option<String>>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from `(token, language)` entries. Tokens must be
    /// unique and there must be at least two of them.
    pub fn new(entries: Vec<(String, Option<String>)>) -> Result<Self, LmError> {
        if entries.len() < 2 {
            return Err(LmError::VocabularyTooSmall(entries.len()));
        }
        let mut tokens = Vec::with_capacity(entries.len());
        let mut languages = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        for (token, language) in entries {
            if index.contains_key(&token) {
                return Err(LmError::DuplicateToken(token));
            }
            index.insert(token.clone(), tokens.len() as TokenId);
            tokens.push(token);
            languages.push(language);
        }
        Ok(Self {
            tokens,
            languages,
            index,
        })
    }

    /// Parses the tab-separated vocabulary format: one token per line, with an
    /// optional `\t<language>` suffix. Blank lines are skipped. Tokens may
    /// contain any non-tab characters, so there is no comment syntax.
    pub fn from_tsv_str(content: &str) -> Result<Self, LmError> {
        let mut entries = Vec::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let token = parts.next().unwrap_or("").to_string();
            if token.is_empty() {
                return Err(LmError::VocabularyParse {
                    line: i + 1,
                    msg: "empty token".into(),
                });
            }
            let language = match parts.next() {
                Some(l) if !l.is_empty() => Some(l.to_string()),
                Some(_) | None => None,
            };
            if parts.next().is_some() {
                return Err(LmError::VocabularyParse {
                    line: i + 1,
                    msg: "more than two tab-separated fields".into(),
                });
            }
            entries.push((token, language));
        }
        Self::new(entries)
    }

    pub fn from_tsv_path(path: &Path) -> Result<Self, LmError> {
        let content = std::fs::read_to_string(path)?;
        Self::from_tsv_str(&content)
    }

    pub fn to_tsv_string(&self) -> String {
        let mut out = String::new();
        for (token, language) in self.tokens.iter().zip(&self.languages) {
            out.push_str(token);
            if let Some(l) = language {
                out.push('\t');
                out.push_str(l);
            }
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Language tag of a token, if it has one.
    pub fn language_of(&self, id: TokenId) -> Option<&str> {
        self.languages.get(id as usize)?.as_deref()
    }

    /// All ids carrying the given language tag, in id order.
    pub fn ids_with_language(&self, language: &str) -> Vec<TokenId> {
        (0..self.len() as TokenId)
            .filter(|&id| self.language_of(id) == Some(language))
            .collect()
    }

    pub fn contains_id(&self, id: TokenId) -> bool {
        (id as usize) < self.tokens.len()
    }

    pub fn validate_ids(&self, ids: &[TokenId]) -> Result<(), LmError> {
        for &id in ids {
            if !self.contains_id(id) {
                return Err(LmError::TokenOutOfRange {
                    id,
                    size: self.len(),
                });
            }
        }
        Ok(())
    }
}

/// A token-id sequence tagged with the language it is written in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    pub language: String,
}

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>, language: impl Into<String>) -> Self {
        Self {
            ids,
            language: language.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] ", self.language)?;
        for (i, id) in self.ids.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{id}")?;
        }
        Ok(())
    }
}

/// A validated vector of finite logits, one per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsVector {
    values: Vec<f64>,
}

impl LogitsVector {
    pub fn new(values: Vec<f64>) -> Result<Self, LmError> {
        if values.is_empty() {
            return Err(LmError::EmptyLogits);
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(LmError::NonFiniteLogit { index, value });
            }
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

/// An autoregressive model over a fixed vocabulary.
///
/// `next_logits` must be a pure function of the prefix: the same prefix always
/// yields the same logits, with no interior randomness.
pub trait LanguageModel: Send + Sync {
    fn vocab(&self) -> &Vocabulary;
    fn next_logits(&self, prefix: &[TokenId]) -> LogitsVector;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_vocab() -> Vocabulary {
        Vocabulary::from_tsv_str("<bos>\nred\ten\nblue\ten\n红\tzh\n").unwrap()
    }

    #[test]
    fn tsv_round_trip_preserves_ids_and_languages() {
        let v = small_vocab();
        assert_eq!(v.len(), 4);
        assert_eq!(v.token(0), Some("<bos>"));
        assert_eq!(v.language_of(0), None);
        assert_eq!(v.id_of("红"), Some(3));
        assert_eq!(v.language_of(3), Some("zh"));
        let round = Vocabulary::from_tsv_str(&v.to_tsv_string()).unwrap();
        assert_eq!(round.len(), v.len());
        assert_eq!(round.id_of("blue"), v.id_of("blue"));
        assert_eq!(round.language_of(2), Some("en"));
    }

    #[test]
    fn duplicate_token_is_rejected() {
        let err = Vocabulary::from_tsv_str("a\nb\na\n").unwrap_err();
        assert!(matches!(err, LmError::DuplicateToken(t) if t == "a"));
    }

    #[test]
    fn single_token_vocab_is_rejected() {
        let err = Vocabulary::from_tsv_str("only\n").unwrap_err();
        assert!(matches!(err, LmError::VocabularyTooSmall(1)));
    }

    #[test]
    fn malformed_line_is_rejected_with_line_number() {
        let err = Vocabulary::from_tsv_str("a\nb\tzh\textra\tmore\n").unwrap_err();
        match err {
            LmError::VocabularyParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn ids_with_language_filters_tagged_tokens() {
        let v = small_vocab();
        assert_eq!(v.ids_with_language("en"), vec![1, 2]);
        assert_eq!(v.ids_with_language("zh"), vec![3]);
        assert!(v.ids_with_language("fr").is_empty());
    }

    #[test]
    fn validate_ids_flags_out_of_range() {
        let v = small_vocab();
        assert!(v.validate_ids(&[0, 3]).is_ok());
        let err = v.validate_ids(&[4]).unwrap_err();
        assert!(matches!(err, LmError::TokenOutOfRange { id: 4, size: 4 }));
    }

    #[test]
    fn logits_vector_rejects_non_finite_and_empty() {
        assert!(matches!(
            LogitsVector::new(vec![]),
            Err(LmError::EmptyLogits)
        ));
        let err = LogitsVector::new(vec![0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, LmError::NonFiniteLogit { index: 1, .. }));
        assert!(LogitsVector::new(vec![1.0, -2.0]).is_ok());
    }
}
