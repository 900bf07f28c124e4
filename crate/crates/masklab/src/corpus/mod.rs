//! Synthetic fact corpus: vocabulary, annotated documents, probes, and
//! generators.
//!
//! Documents are word-level tokenized. Most words are one token, but a
//! share of proper names is deliberately rendered as two tokens forming a
//! single word so that whole-word masking has real work to do. Every token
//! carries a knowledge label: `true` for knowledge-bearing tokens (entities,
//! objects, numbers, content verbs), `false` for knowledge-free scaffold
//! (determiners, punctuation, connectives).

mod bundle;
mod document;
mod generate;
mod jsonl;
mod vocab;

pub use bundle::{BundleManifest, DatasetBundle};
pub use document::{make_cloze_set, ClozeInstance, Document, ProbeItem, Span, Task};
pub use generate::{
    augment_kg_triples, generate_distractor_corpus, generate_synthetic_corpus, DistractorConfig,
    GenConfig, Triple,
};
pub use jsonl::{load_annotated_docs, load_probes, save_annotated_docs, save_probes};
pub use vocab::{build_vocab, TokenId, Vocab, BOS, EOS, MASK, PAD, SPECIAL_TOKENS};
