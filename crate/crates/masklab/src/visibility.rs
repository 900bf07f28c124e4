//! Finding token types the model leans on for the wrong reasons, and
//! hiding them.
//!
//! The detector works on a *special dataset*: every training document with
//! the whole words covering its least-attended tokens masked out. If
//! recovering those words gets easier when some token type is hidden from
//! attention, the model was using that type as a crutch. Detection is a
//! single greedy sweep:
//!
//! 1. Build the special dataset and split it in half (detection /
//!    confirmation).
//! 2. Candidates are the token types appearing more than `tau` times in
//!    the detection half, plus the four special tokens.
//! 3. Measure baseline accuracy with nothing hidden, then re-measure with
//!    each candidate hidden on its own. Candidates that strictly improve
//!    accuracy form the invisible set.
//!
//! Each candidate is judged against the same baseline, so the result is
//! exactly what exhaustive single-type ablation would return. The chosen
//! set is then applied jointly at train, validation, and test time alike;
//! the confirmation half reports how the joint set fares on data the sweep
//! never scored.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::received_attention;
use crate::corpus::{Document, TokenId, BOS, EOS, MASK, PAD};
use crate::model::{argmax_logit, build_visibility_bias, forward, Parameters, VisibilityBias};
use crate::report::sha256_hex;
use crate::{round_half_up, Error, Result};

/// Default frequency threshold for candidate collection.
pub const DEFAULT_TAU: f64 = 3.0;

/// Fraction of each document's word tokens treated as "least attended".
const BOTTOM_FRACTION: f64 = 0.10;

/// One masked document of the special dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialItem {
    pub input: Vec<TokenId>,
    /// Original token at every masked position; never empty.
    pub targets: BTreeMap<usize, TokenId>,
}

/// The special dataset: low-attention words masked, split into a
/// detection half and a confirmation half.
///
/// The provenance hashes pin down which model produced the attention
/// snapshot, so a report can state exactly what was measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialDataset {
    pub val: Vec<SpecialItem>,
    pub held: Vec<SpecialItem>,
    /// Hash of the serialized parameters the attention came from.
    pub model_hash: String,
    /// Hash of the concatenated received-attention vectors.
    pub rcatt_hash: String,
}

/// Word indices covering the bottom tenth of a document's word tokens by
/// received attention (at least one token; ties broken by position).
pub fn bottom_attention_words(doc: &Document, rcatt: &[f64]) -> Vec<usize> {
    let positions: Vec<usize> = doc
        .word_spans
        .iter()
        .flat_map(|&(s, e)| s..e)
        .collect();
    let k = round_half_up(positions.len() as f64 * BOTTOM_FRACTION)
        .max(1)
        .min(positions.len());
    let mut order = positions;
    order.sort_by(|&a, &b| {
        rcatt[a]
            .partial_cmp(&rcatt[b])
            .expect("received attention is never NaN")
            .then(a.cmp(&b))
    });
    let chosen: BTreeSet<usize> = order[..k].iter().copied().collect();

    doc.word_spans
        .iter()
        .enumerate()
        .filter(|(_, &(s, e))| (s..e).any(|p| chosen.contains(&p)))
        .map(|(w, _)| w)
        .collect()
}

/// Builds the special dataset from the training documents.
///
/// Each document is run unmasked (under the current invisible set, if
/// any), its least-attended words are masked whole, and the result lands
/// alternately in the detection and confirmation halves.
pub fn build_special_dataset(
    params: &Parameters,
    docs: &[Document],
    invisible: Option<&BTreeSet<TokenId>>,
) -> Result<SpecialDataset> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rc_bytes = Vec::new();
    let mut items = Vec::with_capacity(docs.len());
    for doc in docs {
        let bias = invisible.map(|set| build_visibility_bias(&doc.token_ids, set));
        let trace = forward(params, &doc.token_ids, bias.as_ref())?;
        let rcatt = received_attention(&trace);
        for v in &rcatt {
            rc_bytes.extend_from_slice(&v.to_le_bytes());
        }

        let mut input = doc.token_ids.clone();
        let mut targets = BTreeMap::new();
        for w in bottom_attention_words(doc, &rcatt) {
            let (s, e) = doc.word_spans[w];
            for pos in s..e {
                targets.insert(pos, doc.token_ids[pos]);
                input[pos] = MASK;
            }
        }
        items.push(SpecialItem { input, targets });
    }

    let mut val = Vec::new();
    let mut held = Vec::new();
    for (i, item) in items.into_iter().enumerate() {
        if i % 2 == 0 {
            val.push(item);
        } else {
            held.push(item);
        }
    }
    Ok(SpecialDataset {
        val,
        held,
        model_hash: sha256_hex(&serde_json::to_vec(params)?),
        rcatt_hash: sha256_hex(&rc_bytes),
    })
}

/// Token types worth testing: everything appearing more than `tau` times
/// in the given items, plus the four special tokens. Ascending by id.
pub fn harmful_candidates(items: &[SpecialItem], tau: f64) -> Vec<TokenId> {
    let mut counts: BTreeMap<TokenId, usize> = BTreeMap::new();
    for item in items {
        for &t in &item.input {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    let mut set: BTreeSet<TokenId> = counts
        .into_iter()
        .filter(|&(_, c)| c as f64 > tau)
        .map(|(t, _)| t)
        .collect();
    set.extend([BOS, EOS, PAD, MASK]);
    set.into_iter().collect()
}

/// Fraction of masked positions whose argmax recovers the original token,
/// with the given token types hidden from attention.
pub fn special_accuracy(
    params: &Parameters,
    items: &[SpecialItem],
    invisible: Option<&BTreeSet<TokenId>>,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for item in items {
        let bias = invisible.map(|set| build_visibility_bias(&item.input, set));
        let trace = forward(params, &item.input, bias.as_ref())?;
        for (&pos, &tok) in &item.targets {
            total += 1;
            if argmax_logit(trace.logits.row(pos)) == tok {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::NoTargets);
    }
    Ok(correct as f64 / total as f64)
}

/// The detector's verdict: which token types to hide, and the evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvisibleSet {
    /// Token types to hide from attention everywhere.
    pub ids: BTreeSet<TokenId>,
    /// Frequency threshold the candidates came from.
    pub tau: f64,
    /// Detection-half accuracy with nothing hidden.
    pub acc0: f64,
    /// Detection-half accuracy with each candidate hidden on its own.
    pub candidate_acc: BTreeMap<TokenId, f64>,
    /// Confirmation-half accuracy with nothing hidden, when that half is
    /// nonempty.
    pub held_acc0: Option<f64>,
    /// Confirmation-half accuracy with the whole set hidden jointly.
    pub held_acc_joint: Option<f64>,
}

impl InvisibleSet {
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Sweeps every candidate independently and keeps the strict improvers.
///
/// All candidates are scored against the same baseline, one at a time, in
/// ascending id order, so the result equals exhaustive single-type
/// ablation. The confirmation half is scored once at the end with the
/// detected set applied jointly.
pub fn detect_harmful(
    params: &Parameters,
    special: &SpecialDataset,
    candidates: &[TokenId],
    tau: f64,
) -> Result<InvisibleSet> {
    if candidates.is_empty() {
        return Err(Error::config("no candidate token types to test"));
    }
    let acc0 = special_accuracy(params, &special.val, None)?;

    let mut sorted: Vec<TokenId> = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let mut ids = BTreeSet::new();
    let mut candidate_acc = BTreeMap::new();
    for &t in &sorted {
        let single = BTreeSet::from([t]);
        let acc = special_accuracy(params, &special.val, Some(&single))?;
        candidate_acc.insert(t, acc);
        if acc > acc0 {
            ids.insert(t);
        }
    }

    let (held_acc0, held_acc_joint) = if special.held.is_empty() {
        (None, None)
    } else {
        let base = special_accuracy(params, &special.held, None)?;
        let joint = if ids.is_empty() {
            base
        } else {
            special_accuracy(params, &special.held, Some(&ids))?
        };
        (Some(base), Some(joint))
    };

    Ok(InvisibleSet {
        ids,
        tau,
        acc0,
        candidate_acc,
        held_acc0,
        held_acc_joint,
    })
}

/// Pipeline stages that consume visibility biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Val,
    Test,
}

/// Builds per-sequence biases for one pipeline stage.
///
/// Every stage uses the same token set; the phase parameter exists so that
/// call sites state which stage they are, and tests can assert the biases
/// agree.
#[derive(Debug, Clone, Copy)]
pub struct BiasFactory<'a> {
    ids: &'a BTreeSet<TokenId>,
    pub phase: Phase,
}

impl BiasFactory<'_> {
    /// `None` when nothing is hidden, so the empty set stays bitwise
    /// identical to running without a bias at all.
    pub fn for_sequence(&self, seq: &[TokenId]) -> Option<VisibilityBias> {
        if self.ids.is_empty() {
            None
        } else {
            Some(build_visibility_bias(seq, self.ids))
        }
    }
}

pub fn apply_invisible(set: &InvisibleSet, phase: Phase) -> BiasFactory<'_> {
    BiasFactory {
        ids: &set.ids,
        phase,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};

    fn plain_doc(ids: Vec<TokenId>) -> Document {
        let word_spans = (0..ids.len())
            .filter(|&i| ids[i] >= 4)
            .map(|i| (i, i + 1))
            .collect();
        Document {
            token_ids: ids,
            kb_labels: None,
            entity_spans: None,
            word_spans,
        }
    }

    fn desk_params(seed: u64) -> Parameters {
        init_params(&ModelConfig::desk(32, seed)).unwrap()
    }

    #[test]
    fn ten_word_doc_masks_exactly_one_word() {
        let params = desk_params(3);
        let doc = plain_doc((4..14).collect());
        let set = build_special_dataset(&params, std::slice::from_ref(&doc), None).unwrap();
        assert_eq!(set.val.len(), 1);
        assert!(set.held.is_empty());
        let item = &set.val[0];
        assert_eq!(item.targets.len(), 1);
        let (&pos, &tok) = item.targets.iter().next().unwrap();
        assert_eq!(item.input[pos], MASK);
        assert_eq!(tok, doc.token_ids[pos]);
    }

    #[test]
    fn masked_words_match_an_independent_recompute() {
        let params = desk_params(4);
        let docs: Vec<Document> = (0..6)
            .map(|i| plain_doc((0..12).map(|j| 4 + (i + j) % 25).collect()))
            .collect();
        let set = build_special_dataset(&params, &docs, None).unwrap();

        // Oracle: redo the attention pass per doc, sort token positions by
        // attention, cover words by hand.
        let mut item_iter = set.val.iter().zip(docs.iter().step_by(2)).count();
        assert_eq!(item_iter, 3);
        item_iter = 0;
        for (half, start) in [(&set.val, 0usize), (&set.held, 1)] {
            for (item, doc) in half.iter().zip(docs.iter().skip(start).step_by(2)) {
                let trace = forward(&params, &doc.token_ids, None).unwrap();
                let rcatt = received_attention(&trace);
                let mut order: Vec<usize> = (0..doc.token_ids.len()).collect();
                order.sort_by(|&a, &b| rcatt[a].partial_cmp(&rcatt[b]).unwrap().then(a.cmp(&b)));
                let k = (doc.token_ids.len() as f64 * 0.10).round().max(1.0) as usize;
                let mut expect = BTreeSet::new();
                for &p in &order[..k] {
                    for &(s, e) in &doc.word_spans {
                        if (s..e).contains(&p) {
                            expect.extend(s..e);
                        }
                    }
                }
                let got: BTreeSet<usize> = item.targets.keys().copied().collect();
                assert_eq!(got, expect);
                item_iter += 1;
            }
        }
        assert_eq!(item_iter, 6);
    }

    #[test]
    fn low_attention_token_inside_a_two_token_word_masks_both() {
        // Zeroed query/key projections give uniform attention, so the
        // bottom token is position 0 by tie-break, inside a 2-token word.
        let mut params = desk_params(5);
        for layer in &mut params.layers {
            layer.wq.fill(0.0);
            layer.wk.fill(0.0);
            layer.bq.fill(0.0);
            layer.bk.fill(0.0);
        }
        let doc = Document {
            token_ids: vec![7, 8, 9, 10, 11, 12, 13, 14, 15, 16],
            kb_labels: None,
            entity_spans: None,
            word_spans: vec![(0, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 8), (8, 9), (9, 10)],
        };
        let set = build_special_dataset(&params, &[doc], None).unwrap();
        let targets: Vec<usize> = set.val[0].targets.keys().copied().collect();
        assert_eq!(targets, vec![0, 1]);
    }

    #[test]
    fn provenance_hashes_pin_model_and_attention() {
        let params = desk_params(6);
        let docs = vec![plain_doc((4..14).collect())];
        let a = build_special_dataset(&params, &docs, None).unwrap();
        let b = build_special_dataset(&params, &docs, None).unwrap();
        assert_eq!(a, b);
        let other = desk_params(7);
        let c = build_special_dataset(&other, &docs, None).unwrap();
        assert_ne!(a.model_hash, c.model_hash);
        assert_ne!(a.rcatt_hash, c.rcatt_hash);
    }

    #[test]
    fn candidate_collection_counts_and_always_adds_specials() {
        let items = vec![SpecialItem {
            input: vec![BOS, 10, 10, 11, EOS],
            targets: BTreeMap::from([(1, 10)]),
        }];
        // Infinite threshold: only the specials remain.
        assert_eq!(harmful_candidates(&items, f64::INFINITY), vec![BOS, EOS, PAD, MASK]);
        // Threshold 0.5: counts 2 and 1 both qualify, specials merged in.
        let low = harmful_candidates(&items, 0.5);
        assert_eq!(low, vec![BOS, EOS, PAD, MASK, 10, 11]);
        // Threshold 1: only the doubled token qualifies.
        let one = harmful_candidates(&items, 1.0);
        assert!(one.contains(&10) && !one.contains(&11));
    }

    fn toy_special(params: &Parameters, n_docs: usize) -> SpecialDataset {
        let docs: Vec<Document> = (0..n_docs)
            .map(|i| plain_doc((0..10).map(|j| 4 + (3 * i + j) % 28).collect()))
            .collect();
        build_special_dataset(params, &docs, None).unwrap()
    }

    #[test]
    fn detection_membership_is_exactly_strict_improvement() {
        let params = desk_params(8);
        let special = toy_special(&params, 8);
        let candidates = harmful_candidates(&special.val, 0.5);
        let found = detect_harmful(&params, &special, &candidates, 0.5).unwrap();
        assert_eq!(found.candidate_acc.len(), candidates.len());
        for (&t, &acc) in &found.candidate_acc {
            assert_eq!(found.ids.contains(&t), acc > found.acc0, "token {t}");
        }
        // Determinism.
        let again = detect_harmful(&params, &special, &candidates, 0.5).unwrap();
        assert_eq!(found, again);
    }

    #[test]
    fn model_that_ignores_attention_yields_an_empty_set() {
        // Zeroed value projections make every attention output constant,
        // so hiding a token can never change a prediction and no strict
        // improvement exists.
        let mut params = desk_params(9);
        for layer in &mut params.layers {
            layer.wv.fill(0.0);
            layer.bv.fill(0.0);
        }
        let special = toy_special(&params, 6);
        let candidates = harmful_candidates(&special.val, 0.5);
        let found = detect_harmful(&params, &special, &candidates, 0.5).unwrap();
        assert!(found.ids.is_empty(), "detected {:?}", found.ids);
        for &acc in found.candidate_acc.values() {
            assert_eq!(acc, found.acc0);
        }
        assert_eq!(found.held_acc_joint, found.held_acc0);
    }

    #[test]
    fn factories_for_all_phases_agree_and_empty_means_none() {
        let seq = vec![BOS, 6, 7, 6, EOS];
        let full = InvisibleSet {
            ids: BTreeSet::from([6]),
            tau: DEFAULT_TAU,
            acc0: 0.25,
            candidate_acc: BTreeMap::from([(6, 0.5)]),
            held_acc0: None,
            held_acc_joint: None,
        };
        let train = apply_invisible(&full, Phase::Train).for_sequence(&seq).unwrap();
        let val = apply_invisible(&full, Phase::Val).for_sequence(&seq).unwrap();
        let test = apply_invisible(&full, Phase::Test).for_sequence(&seq).unwrap();
        assert_eq!(train.to_matrix(), val.to_matrix());
        assert_eq!(val.to_matrix(), test.to_matrix());

        let empty = InvisibleSet {
            ids: BTreeSet::new(),
            tau: DEFAULT_TAU,
            acc0: 0.25,
            candidate_acc: BTreeMap::new(),
            held_acc0: None,
            held_acc_joint: None,
        };
        assert!(apply_invisible(&empty, Phase::Train).for_sequence(&seq).is_none());
    }

    #[test]
    fn invisible_set_round_trips_through_json() {
        let set = InvisibleSet {
            ids: BTreeSet::from([1, 9]),
            tau: 3.0,
            acc0: 0.125,
            candidate_acc: BTreeMap::from([(1, 0.25), (9, 0.375), (12, 0.0)]),
            held_acc0: Some(0.1),
            held_acc_joint: Some(0.2),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("invisible.json");
        set.save(&path).unwrap();
        assert_eq!(InvisibleSet::load(&path).unwrap(), set);
    }
}
