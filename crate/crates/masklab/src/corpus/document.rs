//! Annotated documents and cloze probes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, Vocab, MASK};
use crate::{Error, Result};

/// Half-open token range `[start, end)`.
pub type Span = (usize, usize);

/// One tokenized training document.
///
/// `word_spans` partition the non-special positions into whole words; every
/// masking decision in the crate is made per word span, never per token, so
/// multi-token proper names are always masked atomically. `entity_spans`
/// mark named entities and always coincide with a union of consecutive word
/// spans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub token_ids: Vec<TokenId>,
    /// Knowledge labels aligned to `token_ids`; `None` for unannotated text.
    pub kb_labels: Option<Vec<bool>>,
    /// Entity token ranges; `None` when the source had no entity markup.
    pub entity_spans: Option<Vec<Span>>,
    pub word_spans: Vec<Span>,
}

impl Document {
    pub fn n_tokens(&self) -> usize {
        self.token_ids.len()
    }

    pub fn n_words(&self) -> usize {
        self.word_spans.len()
    }

    /// Knowledge labels, or an error for unannotated documents.
    pub fn kb_labels(&self) -> Result<&[bool]> {
        self.kb_labels
            .as_deref()
            .ok_or_else(|| Error::MissingAnnotations("kb_labels".into()))
    }

    /// Entity spans, or an error when the document carries none.
    pub fn entity_spans(&self) -> Result<&[Span]> {
        self.entity_spans
            .as_deref()
            .ok_or_else(|| Error::MissingAnnotations("entity_spans".into()))
    }

    /// True when every token of word `w` is labeled knowledge-bearing.
    ///
    /// Generated corpora label all tokens of a word alike; for mixed labels
    /// this errs on the side of knowledge-free.
    pub fn word_is_kb(&self, w: usize) -> Result<bool> {
        let labels = self.kb_labels()?;
        let (s, e) = self.word_spans[w];
        Ok(labels[s..e].iter().all(|&b| b))
    }

    /// Checks internal alignment and span structure.
    ///
    /// Word spans must be nonempty, strictly ascending, non-overlapping, in
    /// bounds, and disjoint from special-token positions. Entity spans must
    /// align with word-span boundaries.
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.token_ids.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        for &id in &self.token_ids {
            if id >= vocab_size {
                return Err(Error::TokenOutOfRange {
                    id,
                    vocab: vocab_size,
                });
            }
        }
        if let Some(labels) = &self.kb_labels {
            if labels.len() != self.token_ids.len() {
                return Err(Error::config(format!(
                    "kb_labels length {} does not match {} tokens",
                    labels.len(),
                    self.token_ids.len()
                )));
            }
        }
        let n = self.token_ids.len();
        let mut prev_end = 0usize;
        for &(s, e) in &self.word_spans {
            if s >= e || e > n {
                return Err(Error::config(format!("bad word span ({s}, {e})")));
            }
            if s < prev_end {
                return Err(Error::config(format!(
                    "word span ({s}, {e}) overlaps or reorders a previous span"
                )));
            }
            if self.token_ids[s..e].iter().any(|&id| Vocab::is_special(id)) {
                return Err(Error::config(format!(
                    "word span ({s}, {e}) covers a special token"
                )));
            }
            prev_end = e;
        }
        if let Some(spans) = &self.entity_spans {
            let starts: Vec<usize> = self.word_spans.iter().map(|&(s, _)| s).collect();
            let ends: Vec<usize> = self.word_spans.iter().map(|&(_, e)| e).collect();
            for &(s, e) in spans {
                if s >= e || e > n {
                    return Err(Error::config(format!("bad entity span ({s}, {e})")));
                }
                let si = starts.binary_search(&s);
                let ei = ends.binary_search(&e);
                let aligned = match (si, ei) {
                    (Ok(a), Ok(b)) => {
                        // Consecutive word spans with no gap between them.
                        a <= b && (a..b).all(|w| self.word_spans[w].1 == self.word_spans[w + 1].0)
                    }
                    _ => false,
                };
                if !aligned {
                    return Err(Error::config(format!(
                        "entity span ({s}, {e}) does not align with word spans"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Word indices whose span lies inside the given entity span.
    pub fn words_in_span(&self, span: Span) -> Vec<usize> {
        self.word_spans
            .iter()
            .enumerate()
            .filter(|(_, &(s, e))| s >= span.0 && e <= span.1)
            .map(|(w, _)| w)
            .collect()
    }
}

/// Probe task families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// The training sentence itself with the object masked.
    Lama,
    /// A natural-language question followed by `? <mask>`.
    Cbqa,
    /// The bare triple form `subject , relation , <mask>`.
    Kg,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Task::Lama => write!(f, "lama"),
            Task::Cbqa => write!(f, "cbqa"),
            Task::Kg => write!(f, "kg"),
        }
    }
}

/// One cloze probe: a query containing mask tokens and the answers those
/// masks must take, in position order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeItem {
    pub query_ids: Vec<TokenId>,
    pub answer_ids: Vec<TokenId>,
    pub task: Task,
}

impl ProbeItem {
    /// Positions of mask tokens in the query.
    pub fn mask_positions(&self) -> Vec<usize> {
        self.query_ids
            .iter()
            .enumerate()
            .filter(|(_, &id)| id == MASK)
            .map(|(i, _)| i)
            .collect()
    }

    /// Checks id ranges and that masks and answers line up one-to-one.
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        for &id in self.query_ids.iter().chain(&self.answer_ids) {
            if id >= vocab_size {
                return Err(Error::TokenOutOfRange {
                    id,
                    vocab: vocab_size,
                });
            }
        }
        let masks = self.mask_positions().len();
        if masks == 0 {
            return Err(Error::NoTargets);
        }
        if masks != self.answer_ids.len() {
            return Err(Error::config(format!(
                "probe has {masks} masks but {} answers",
                self.answer_ids.len()
            )));
        }
        Ok(())
    }

    /// The query with answers as position-keyed targets.
    pub fn targets(&self) -> BTreeMap<usize, TokenId> {
        self.mask_positions()
            .into_iter()
            .zip(self.answer_ids.iter().copied())
            .collect()
    }
}

/// One whole-word cloze instance produced by [`make_cloze_set`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClozeInstance {
    /// Document tokens with one word replaced by masks.
    pub input: Vec<TokenId>,
    /// Original token at each masked position.
    pub targets: BTreeMap<usize, TokenId>,
    /// Index of the masked word in `doc.word_spans`.
    pub word_index: usize,
}

/// Expands a document into one cloze instance per word.
///
/// Instance `i` masks every token of word `i` and leaves the rest of the
/// document intact, so a document with `W` words yields exactly `W`
/// instances regardless of how many tokens each word has.
pub fn make_cloze_set(doc: &Document) -> Vec<ClozeInstance> {
    let mut out = Vec::with_capacity(doc.n_words());
    for (w, &(s, e)) in doc.word_spans.iter().enumerate() {
        let mut input = doc.token_ids.clone();
        let mut targets = BTreeMap::new();
        for pos in s..e {
            targets.insert(pos, input[pos]);
            input[pos] = MASK;
        }
        out.push(ClozeInstance {
            input,
            targets,
            word_index: w,
        });
    }
    out
}
