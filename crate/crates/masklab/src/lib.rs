//! masklab is a desk-scale laboratory for studying how masked language
//! models pick up facts from plain text.
//!
//! Everything runs in seconds to minutes on a laptop: the corpus is a
//! synthetic gazetteer of (subject, relation, object) facts rendered through
//! sentence templates, and the model is a small transformer encoder trained
//! with exact f64 arithmetic so that experiments are reproducible down to
//! the byte.
//!
//! The crate is organized around four questions:
//!
//! * Which tokens does the encoder attend to? ([`attention`] sums attention
//!   received per position across layers and heads, and buckets it into
//!   deciles against knowledge-bearing labels.)
//! * Where should the mask budget go? ([`mask`] implements random,
//!   prediction-guided, attention-guided, and span-oracle masking policies
//!   with a two-phase budget split.)
//! * Which token types actively hurt recall? ([`visibility`] detects them by
//!   re-evaluating a probe set with one type at a time blocked out of
//!   attention.)
//! * Did any of it help? ([`eval`] runs continual pretraining under a policy
//!   and scores cloze probes all-or-nothing, split by knowledge class.)
//!
//! # Examples
//!
//! Each major capability has a runnable example:
//!
//! ```text
//! cargo run --release --example generate_corpus        # corpus + probes on disk
//! cargo run --release --example attention_deciles      # received attention vs. labels
//! cargo run --release --example mask_policies          # policy plans side by side
//! cargo run --release --example detect_harmful_tokens  # visibility ablation loop
//! cargo run --release --example train_and_probe        # one training run + report
//! cargo run --release --example policy_comparison      # the full policy table
//! ```
//!
//! The same workflows are scriptable through the `masklab` binary
//! (`gen-corpus`, `run`, `analyze`, `detect-invisible`, `report`).

pub mod attention;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod mask;
pub mod model;
pub mod report;
pub mod seeds;
pub mod visibility;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Rounds half away from zero, which for the non-negative counts used
/// throughout this crate means round-half-up. `0.5` becomes `1`, `2.5`
/// becomes `3`.
pub fn round_half_up(x: f64) -> usize {
    debug_assert!(x >= 0.0, "round_half_up expects non-negative input");
    x.round() as usize
}
