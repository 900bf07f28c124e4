//! Word-level vocabulary with four reserved special tokens.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Index into a [`Vocab`].
pub type TokenId = usize;

/// Beginning-of-sequence token id.
pub const BOS: TokenId = 0;
/// End-of-sequence token id.
pub const EOS: TokenId = 1;
/// Padding token id.
pub const PAD: TokenId = 2;
/// Mask token id.
pub const MASK: TokenId = 3;

/// Surface forms of the reserved tokens, in id order.
pub const SPECIAL_TOKENS: [&str; 4] = ["<s>", "</s>", "<pad>", "<mask>"];

/// Vocabulary mapping token strings to dense ids.
///
/// Ids 0..4 are always the reserved specials; remaining ids follow first
/// appearance order in the corpus the vocabulary was built from, which makes
/// construction deterministic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len() {
            return Err(Error::config("vocabulary must include the special tokens"));
        }
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens[i] != *s {
                return Err(Error::config(format!(
                    "special token {s:?} must sit at id {i}, found {:?}",
                    tokens[i]
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), id).is_some() {
                return Err(Error::config(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Number of token types, specials included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id for a token string, if present.
    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Surface form for an id. Panics if `id` is out of range.
    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    /// True for the four reserved ids.
    pub fn is_special(id: TokenId) -> bool {
        id < SPECIAL_TOKENS.len()
    }

    /// Encodes a word sequence, failing on the first unknown token.
    pub fn encode(&self, words: &[impl AsRef<str>]) -> Result<Vec<TokenId>> {
        words
            .iter()
            .map(|w| {
                self.id(w.as_ref()).ok_or_else(|| Error::UnknownToken {
                    token: w.as_ref().to_string(),
                })
            })
            .collect()
    }

    /// Decodes ids back to their surface forms.
    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                if id < self.tokens.len() {
                    Ok(self.tokens[id].clone())
                } else {
                    Err(Error::TokenOutOfRange {
                        id,
                        vocab: self.tokens.len(),
                    })
                }
            })
            .collect()
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Vocab::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Vec<String> {
        v.tokens
    }
}

/// Builds a vocabulary over tokenized sequences.
///
/// Specials take ids 0..4 whether or not they occur in the input; all other
/// tokens get ids in first appearance order. Fails with
/// [`Error::EmptyCorpus`] when no sequence contains a token.
pub fn build_vocab(sequences: &[Vec<String>]) -> Result<Vocab> {
    if sequences.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    let mut seen: HashMap<&str, ()> =
        SPECIAL_TOKENS.iter().map(|s| (*s, ())).collect();
    for seq in sequences {
        for tok in seq {
            if seen.insert(tok.as_str(), ()).is_none() {
                tokens.push(tok.clone());
            }
        }
    }
    // `seen` borrows from both SPECIAL_TOKENS and the input; rebuild the
    // owned index inside from_tokens.
    Vocab::from_tokens(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn specials_hold_reserved_ids_and_order_is_first_appearance() {
        let v = build_vocab(&[
            words("<s> Alda sails . </s>"),
            words("<s> Alda rests . </s>"),
        ])
        .unwrap();
        assert_eq!(v.len(), 8);
        assert_eq!(v.id("<s>"), Some(BOS));
        assert_eq!(v.id("</s>"), Some(EOS));
        assert_eq!(v.id("<pad>"), Some(PAD));
        assert_eq!(v.id("<mask>"), Some(MASK));
        assert_eq!(v.id("Alda"), Some(4));
        assert_eq!(v.id("sails"), Some(5));
        assert_eq!(v.id("."), Some(6));
        assert_eq!(v.id("rests"), Some(7));
        assert_eq!(v.token(4), "Alda");
    }

    #[test]
    fn empty_sequences_are_tolerated_when_any_token_exists() {
        let v = build_vocab(&[vec![], words("x")]).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("x"), Some(4));
    }

    #[test]
    fn no_tokens_at_all_is_an_error() {
        assert!(matches!(build_vocab(&[]), Err(Error::EmptyCorpus)));
        assert!(matches!(
            build_vocab(&[vec![], vec![]]),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn encode_rejects_unknown_tokens() {
        let v = build_vocab(&[words("a b")]).unwrap();
        assert_eq!(v.encode(&["a", "b", "a"]).unwrap(), vec![4, 5, 4]);
        assert!(matches!(
            v.encode(&["a", "zzz"]),
            Err(Error::UnknownToken { token }) if token == "zzz"
        ));
    }

    #[test]
    fn serde_round_trip_preserves_ids() {
        let v = build_vocab(&[words("a b c")]).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&s).unwrap();
        assert_eq!(v, back);
        assert_eq!(back.id("c"), Some(6));
    }

    #[test]
    fn serde_rejects_misplaced_specials() {
        let bad = serde_json::json!(["<s>", "</s>", "<mask>", "<pad>", "a"]);
        assert!(serde_json::from_value::<Vocab>(bad).is_err());
    }

    #[test]
    fn duplicate_input_tokens_get_one_id() {
        let v = build_vocab(&[words("a a a b")]).unwrap();
        assert_eq!(v.len(), 6);
    }
}
