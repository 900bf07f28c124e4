//! Mask plans: which words get hidden during pre-training, chosen by a
//! baseline or a selective policy.
//!
//! All policies spend the same two-phase budget so that accuracy
//! differences come from *which* words are masked, never *how many*. For a
//! document of `N` maskable words the total budget is
//!
//! ```text
//! T = clamp(round(N * (p1 + p2)), 1, N)
//! ```
//!
//! Selective policies nominate candidate words first (mispredicted words
//! for the inaccuracy policy, least-attended words for the attention
//! policy), spend up to `round(N * p1)` of the budget on candidates in
//! phase 1, and fill the rest of `T` with uniformly chosen other words in
//! phase 2. A candidate shortfall rolls over into phase 2, keeping `T`
//! exact. Candidate sources are never combined: a plan carries exactly one
//! policy.
//!
//! Plans address words, not tokens. Applying a plan masks every token of
//! each chosen word together, so multi-token names disappear atomically.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::received_attention;
use crate::corpus::{Document, TokenId, MASK};
use crate::model::{build_visibility_bias, forward, Parameters};
use crate::{round_half_up, Error, Result};

/// The mask policies under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Uniform choice over all words.
    Random,
    /// Candidates are words the current model mispredicts under a random
    /// probe mask.
    SelI,
    /// Candidates are the words receiving the least attention.
    SelA,
    /// Candidates are annotated entity spans, masked whole.
    SsmOracle,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Random, Policy::SelI, Policy::SelA, Policy::SsmOracle];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Random => "random",
            Policy::SelI => "sel-i",
            Policy::SelA => "sel-a",
            Policy::SsmOracle => "ssm-oracle",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Policy::Random),
            "sel-i" => Ok(Policy::SelI),
            "sel-a" => Ok(Policy::SelA),
            // "ssm" is the short form the command line uses.
            "ssm-oracle" | "ssm" => Ok(Policy::SsmOracle),
            other => Err(Error::config(format!(
                "unknown policy {other:?} (expected random, sel-i, sel-a, or ssm)"
            ))),
        }
    }
}

/// Budget and candidate-selection knobs shared by every policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Phase-1 mask probability.
    pub p1: f64,
    /// Phase-2 mask probability.
    pub p2: f64,
    /// Fraction of words nominated by the least-attention policy. Kept
    /// above `p1` so phase 1 normally fills from candidates alone.
    pub sel_a_fraction: f64,
    /// Fraction of words probed by the inaccuracy policy's pre-pass.
    pub probe_mask_rate: f64,
    /// Root seed for plan sampling; callers derive per-document streams.
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            p1: 0.15,
            p2: 0.10,
            sel_a_fraction: 0.30,
            probe_mask_rate: 0.15,
            seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let total = self.p1 + self.p2;
        if !(self.p1 >= 0.0 && self.p2 >= 0.0 && total > 0.0 && total <= 1.0) {
            return Err(Error::config(format!(
                "mask probabilities p1={} p2={} must be non-negative with 0 < p1+p2 <= 1",
                self.p1, self.p2
            )));
        }
        if !(0.0..=1.0).contains(&self.sel_a_fraction) {
            return Err(Error::config("sel_a_fraction must lie in [0, 1]"));
        }
        if !(self.probe_mask_rate > 0.0 && self.probe_mask_rate <= 1.0) {
            return Err(Error::config("probe_mask_rate must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Total words to mask in a document of `n_words` maskable words.
///
/// Never zero (tiny documents still yield one mask) and never more than
/// the document holds.
pub fn mask_budget(n_words: usize, cfg: &PolicyConfig) -> usize {
    round_half_up(n_words as f64 * (cfg.p1 + cfg.p2))
        .max(1)
        .min(n_words)
}

/// The words one policy chose to mask in one document.
///
/// `phase1` and `phase2` hold disjoint word indices (into
/// `doc.word_spans`), each sorted ascending. Their combined size always
/// equals [`mask_budget`] for the document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub policy: Policy,
    pub phase1: Vec<usize>,
    pub phase2: Vec<usize>,
}

impl MaskPlan {
    fn new(policy: Policy, mut phase1: Vec<usize>, mut phase2: Vec<usize>) -> Self {
        phase1.sort_unstable();
        phase2.sort_unstable();
        MaskPlan {
            policy,
            phase1,
            phase2,
        }
    }

    pub fn total(&self) -> usize {
        self.phase1.len() + self.phase2.len()
    }

    /// All masked word indices, ascending.
    pub fn words(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.phase1.iter().chain(&self.phase2).copied().collect();
        all.sort_unstable();
        all
    }

    pub fn validate(&self, doc: &Document) -> Result<()> {
        let n = doc.word_spans.len();
        let mut seen = BTreeSet::new();
        for &w in self.phase1.iter().chain(&self.phase2) {
            if w >= n {
                return Err(Error::config(format!(
                    "plan masks word {w} but the document has {n} words"
                )));
            }
            if !seen.insert(w) {
                return Err(Error::config(format!("plan masks word {w} twice")));
            }
        }
        if self.phase1.is_empty() && self.phase2.is_empty() {
            return Err(Error::NoTargets);
        }
        Ok(())
    }
}

/// Uniform baseline: the whole budget is drawn in one pass.
pub fn random_plan(doc: &Document, cfg: &PolicyConfig, rng: &mut ChaCha8Rng) -> Result<MaskPlan> {
    cfg.validate()?;
    let n = doc.word_spans.len();
    if n == 0 {
        return Err(Error::NoTargets);
    }
    let t = mask_budget(n, cfg);
    let chosen = sample(rng, n, t).into_vec();
    Ok(MaskPlan::new(Policy::Random, chosen, Vec::new()))
}

/// Words the current model gets wrong under a random probe mask.
///
/// Probes `round(N * probe_mask_rate)` words (at least one): masks them,
/// runs the model once, and keeps every probed word with any mispredicted
/// token. Returned indices are ascending. Resampled per call, so repeated
/// calls probe different words.
pub fn sel_i_candidates(
    params: &Parameters,
    doc: &Document,
    invisible: Option<&BTreeSet<TokenId>>,
    cfg: &PolicyConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    let n = doc.word_spans.len();
    if n == 0 {
        return Err(Error::NoTargets);
    }
    let k = round_half_up(n as f64 * cfg.probe_mask_rate).max(1).min(n);
    let mut probed = sample(rng, n, k).into_vec();
    probed.sort_unstable();

    let mut input = doc.token_ids.clone();
    for &w in &probed {
        let (s, e) = doc.word_spans[w];
        input[s..e].fill(MASK);
    }
    let bias = invisible.map(|set| build_visibility_bias(&input, set));
    let trace = forward(params, &input, bias.as_ref())?;

    let mut candidates = Vec::new();
    for &w in &probed {
        let (s, e) = doc.word_spans[w];
        let wrong =
            (s..e).any(|pos| crate::model::argmax_logit(trace.logits.row(pos)) != doc.token_ids[pos]);
        if wrong {
            candidates.push(w);
        }
    }
    Ok(candidates)
}

/// The least-attended words.
///
/// Runs the model on the unmasked document, scores each word by the summed
/// received attention of its tokens, and nominates the bottom
/// `round(sel_a_fraction * word count)` words (ties broken by position).
/// Returned indices are ascending.
pub fn sel_a_candidates(
    params: &Parameters,
    doc: &Document,
    invisible: Option<&BTreeSet<TokenId>>,
    cfg: &PolicyConfig,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    let n = doc.word_spans.len();
    if n == 0 {
        return Err(Error::NoTargets);
    }
    let bias = invisible.map(|set| build_visibility_bias(&doc.token_ids, set));
    let trace = forward(params, &doc.token_ids, bias.as_ref())?;
    let rcatt = received_attention(&trace);

    let score = |w: usize| -> f64 {
        let (s, e) = doc.word_spans[w];
        rcatt[s..e].iter().sum()
    };
    let mut words: Vec<usize> = (0..n).collect();
    words.sort_by(|&a, &b| {
        score(a)
            .partial_cmp(&score(b))
            .expect("attention is finite")
            .then(a.cmp(&b))
    });
    let k = round_half_up(n as f64 * cfg.sel_a_fraction).min(n);
    let mut chosen = words[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Spends the two-phase budget given a candidate set.
///
/// Phase 1 samples `min(round(N * p1), |candidates|)` words from the
/// candidates; whatever phase 1 could not spend rolls into phase 2, which
/// samples from the remaining words. The total always equals
/// [`mask_budget`].
pub fn two_phase_plan(
    doc: &Document,
    policy: Policy,
    candidates: &[usize],
    cfg: &PolicyConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MaskPlan> {
    cfg.validate()?;
    let n = doc.word_spans.len();
    if n == 0 {
        return Err(Error::NoTargets);
    }
    let unique: BTreeSet<usize> = candidates.iter().copied().collect();
    if let Some(&bad) = unique.iter().find(|&&w| w >= n) {
        return Err(Error::config(format!(
            "candidate word {bad} out of range for a {n}-word document"
        )));
    }
    let pool: Vec<usize> = unique.into_iter().collect();

    let t = mask_budget(n, cfg);
    let want1 = round_half_up(n as f64 * cfg.p1).min(pool.len()).min(t);
    let phase1: Vec<usize> = sample(rng, pool.len(), want1)
        .into_iter()
        .map(|i| pool[i])
        .collect();

    let taken: BTreeSet<usize> = phase1.iter().copied().collect();
    let rest: Vec<usize> = (0..n).filter(|w| !taken.contains(w)).collect();
    let want2 = t - want1;
    let phase2: Vec<usize> = sample(rng, rest.len(), want2)
        .into_iter()
        .map(|i| rest[i])
        .collect();

    Ok(MaskPlan::new(policy, phase1, phase2))
}

/// Salient-span oracle: masks annotated entity spans whole.
///
/// At least one span goes into phase 1 (truncated only when a single span
/// exceeds the whole budget); further spans are added while they fit
/// whole. The leftover budget is spent on non-entity words, spilling back
/// onto unused entity words only when nothing else remains. Requires
/// entity annotations.
pub fn ssm_oracle_plan(
    doc: &Document,
    cfg: &PolicyConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MaskPlan> {
    cfg.validate()?;
    let spans = doc
        .entity_spans()
        .map_err(|_| Error::MissingAnnotations("salient-span masking requires entity spans".into()))?;
    let n = doc.word_spans.len();
    if n == 0 {
        return Err(Error::NoTargets);
    }
    let t = mask_budget(n, cfg);

    let mut groups: Vec<Vec<usize>> = spans.iter().map(|&sp| doc.words_in_span(sp)).collect();
    groups.retain(|g| !g.is_empty());
    groups.shuffle(rng);

    let mut phase1: Vec<usize> = Vec::new();
    for (i, group) in groups.iter().enumerate() {
        if i == 0 {
            // The guaranteed span; budget exactness still wins if the span
            // alone is larger than the whole budget.
            phase1.extend(group.iter().take(t));
        } else if phase1.len() + group.len() <= t {
            phase1.extend(group);
        }
    }

    let entity_words: BTreeSet<usize> = groups.iter().flatten().copied().collect();
    let taken: BTreeSet<usize> = phase1.iter().copied().collect();
    let plain: Vec<usize> = (0..n)
        .filter(|w| !entity_words.contains(w))
        .collect();
    let spare: Vec<usize> = entity_words
        .iter()
        .copied()
        .filter(|w| !taken.contains(w))
        .collect();

    let mut want2 = t - phase1.len();
    let mut phase2: Vec<usize> = Vec::new();
    let from_plain = want2.min(plain.len());
    phase2.extend(sample(rng, plain.len(), from_plain).into_iter().map(|i| plain[i]));
    want2 -= from_plain;
    if want2 > 0 {
        phase2.extend(sample(rng, spare.len(), want2).into_iter().map(|i| spare[i]));
    }

    Ok(MaskPlan::new(Policy::SsmOracle, phase1, phase2))
}

/// Builds a plan for one document under the given policy.
///
/// `invisible` token types, when provided, shape the model passes the
/// selective policies run (the plan itself never masks by token type).
pub fn make_plan(
    params: &Parameters,
    doc: &Document,
    invisible: Option<&BTreeSet<TokenId>>,
    policy: Policy,
    cfg: &PolicyConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MaskPlan> {
    match policy {
        Policy::Random => random_plan(doc, cfg, rng),
        Policy::SelI => {
            let cand = sel_i_candidates(params, doc, invisible, cfg, rng)?;
            two_phase_plan(doc, Policy::SelI, &cand, cfg, rng)
        }
        Policy::SelA => {
            let cand = sel_a_candidates(params, doc, invisible, cfg)?;
            two_phase_plan(doc, Policy::SelA, &cand, cfg, rng)
        }
        Policy::SsmOracle => ssm_oracle_plan(doc, cfg, rng),
    }
}

/// Masks every token of every planned word, returning the model input and
/// the original token at each masked position.
pub fn apply_plan(doc: &Document, plan: &MaskPlan) -> Result<(Vec<TokenId>, BTreeMap<usize, TokenId>)> {
    plan.validate(doc)?;
    let mut input = doc.token_ids.clone();
    let mut targets = BTreeMap::new();
    for w in plan.words() {
        let (s, e) = doc.word_spans[w];
        for pos in s..e {
            targets.insert(pos, doc.token_ids[pos]);
            input[pos] = MASK;
        }
    }
    Ok((input, targets))
}

/// BERT-style corruption: each planned token becomes the mask token with
/// probability 0.8, a random word token with 0.1, and stays itself with
/// 0.1. Targets still cover every planned position.
///
/// The strict MLM loss only accepts targets at mask positions, so this
/// variant serves mask-statistics audits rather than the training loop.
pub fn apply_plan_corrupt(
    doc: &Document,
    plan: &MaskPlan,
    vocab_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<TokenId>, BTreeMap<usize, TokenId>)> {
    plan.validate(doc)?;
    if vocab_size <= 4 {
        return Err(Error::config("corruption needs at least one word token in the vocabulary"));
    }
    let mut input = doc.token_ids.clone();
    let mut targets = BTreeMap::new();
    for w in plan.words() {
        let (s, e) = doc.word_spans[w];
        for pos in s..e {
            targets.insert(pos, doc.token_ids[pos]);
            let roll: f64 = rng.random();
            if roll < 0.8 {
                input[pos] = MASK;
            } else if roll < 0.9 {
                input[pos] = rng.random_range(4..vocab_size);
            }
        }
    }
    Ok((input, targets))
}

/// Ratio of knowledge-bearing to knowledge-free tokens among everything
/// the plans mask, aggregated across documents.
///
/// Returns infinity when no knowledge-free token was masked at all.
pub fn masked_kb_ratio(plans: &[MaskPlan], docs: &[Document]) -> Result<f64> {
    if plans.len() != docs.len() {
        return Err(Error::config(format!(
            "{} plans for {} documents",
            plans.len(),
            docs.len()
        )));
    }
    let mut kb = 0usize;
    let mut kf = 0usize;
    for (plan, doc) in plans.iter().zip(docs) {
        plan.validate(doc)?;
        let labels = doc.kb_labels()?;
        for w in plan.words() {
            let (s, e) = doc.word_spans[w];
            for pos in s..e {
                if labels[pos] {
                    kb += 1;
                } else {
                    kf += 1;
                }
            }
        }
    }
    if kf == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(kb as f64 / kf as f64)
}

/// One audit line: which words a policy masked in which document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub doc: usize,
    pub policy: Policy,
    pub seed: u64,
    pub phase1: Vec<usize>,
    pub phase2: Vec<usize>,
}

impl PlanRecord {
    pub fn new(doc: usize, seed: u64, plan: &MaskPlan) -> Self {
        PlanRecord {
            doc,
            policy: plan.policy,
            seed,
            phase1: plan.phase1.clone(),
            phase2: plan.phase2.clone(),
        }
    }
}

/// Writes plan records as JSON lines.
pub fn save_plans(path: &Path, records: &[PlanRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads plan records back, reporting the 1-based line of any bad record.
pub fn load_plans(path: &Path) -> Result<Vec<PlanRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io::Error::from)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}
