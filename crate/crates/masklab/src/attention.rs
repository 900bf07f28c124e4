//! Received-attention analysis: who gets looked at, and does it line up
//! with knowledge?
//!
//! For a sentence of length `n` run through `L` layers and `H` heads, the
//! received attention of position `t` is the total attention mass flowing
//! into `t`:
//!
//! ```text
//! rcatt[t] = sum over layers l, heads h, source rows k of attn[l][h][k][t]
//! ```
//!
//! Because every attention row sums to one, the vector as a whole conserves
//! mass: `sum(rcatt) = L * H * n` exactly (up to float addition error).

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Vocab};
use crate::model::ForwardTrace;
use crate::{Error, Result};

/// Received attention per position of one sentence.
pub fn received_attention(trace: &ForwardTrace) -> Vec<f64> {
    let n = trace.seq_len();
    let mut rc = vec![0.0; n];
    for layer in &trace.attention {
        // Sum over source rows first, then heads.
        let per_head = layer.sum_axis(Axis(1));
        let total = per_head.sum_axis(Axis(0));
        for t in 0..n {
            rc[t] += total[t];
        }
    }
    rc
}

/// One decile bucket's tally.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecileBucket {
    pub kb_tokens: usize,
    pub total_tokens: usize,
}

impl DecileBucket {
    /// Knowledge-bearing share, or `None` for an empty bucket.
    pub fn kb_proportion(&self) -> Option<f64> {
        if self.total_tokens == 0 {
            None
        } else {
            Some(self.kb_tokens as f64 / self.total_tokens as f64)
        }
    }
}

/// Where special tokens land in the ranking, reported separately because
/// they never enter the deciles themselves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecialsRow {
    pub count: usize,
    /// Mean of rank/(n-1) over all special tokens, ranking every token of
    /// each sentence ascending by received attention. 1.0 means specials
    /// always receive the most attention in their sentence.
    pub mean_rank_fraction: f64,
    /// Share of total received-attention mass landing on specials.
    pub rcatt_share: f64,
}

/// Knowledge-bearing proportion per received-attention decile.
///
/// Bucket 0 holds each sentence's least-attended tokens, bucket 9 its most
/// attended. Only word tokens are ranked; specials get their own optional
/// row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecileTable {
    pub buckets: Vec<DecileBucket>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specials: Option<SpecialsRow>,
}

impl DecileTable {
    /// Spearman correlation between bucket index and knowledge proportion,
    /// over non-empty buckets.
    pub fn rank_correlation(&self) -> Result<f64> {
        let pairs: Vec<(f64, f64)> = self
            .buckets
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.kb_proportion().map(|p| (i as f64, p)))
            .collect();
        let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        spearman_rank_corr(&xs, &ys)
    }
}

/// Ranks one sentence's positions ascending by received attention, ties
/// broken by position. Returns position indices in rank order.
fn rank_positions(rcatt: &[f64], positions: &[usize]) -> Vec<usize> {
    let mut order = positions.to_vec();
    order.sort_by(|&a, &b| {
        rcatt[a]
            .partial_cmp(&rcatt[b])
            .expect("received attention is never NaN")
            .then(a.cmp(&b))
    });
    order
}

/// Buckets every word token of every sentence into received-attention
/// deciles and tallies knowledge labels per bucket.
///
/// `rcatts[i]` must align with `docs[i].token_ids`. Bucket membership is
/// per sentence: rank `r` of `n` word tokens lands in bucket
/// `floor(10 r / n)`, so bucket sizes within a sentence differ by at most
/// one. Documents must carry knowledge labels.
pub fn decile_kb_table(
    docs: &[Document],
    rcatts: &[Vec<f64>],
    include_specials: bool,
) -> Result<DecileTable> {
    if docs.len() != rcatts.len() {
        return Err(Error::config(format!(
            "{} documents but {} attention vectors",
            docs.len(),
            rcatts.len()
        )));
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut buckets = vec![DecileBucket::default(); 10];
    let mut special_count = 0usize;
    let mut special_rank_sum = 0.0;
    let mut special_mass = 0.0;
    let mut total_mass = 0.0;

    for (doc, rcatt) in docs.iter().zip(rcatts) {
        let labels = doc.kb_labels()?;
        if rcatt.len() != doc.token_ids.len() {
            return Err(Error::config(format!(
                "attention vector length {} does not match {} tokens",
                rcatt.len(),
                doc.token_ids.len()
            )));
        }

        let words: Vec<usize> = (0..doc.token_ids.len())
            .filter(|&p| !Vocab::is_special(doc.token_ids[p]))
            .collect();
        let n = words.len();
        if n == 0 {
            continue;
        }
        for (rank, &pos) in rank_positions(rcatt, &words).iter().enumerate() {
            let bucket = rank * 10 / n;
            buckets[bucket].total_tokens += 1;
            if labels[pos] {
                buckets[bucket].kb_tokens += 1;
            }
        }

        if include_specials {
            let all: Vec<usize> = (0..doc.token_ids.len()).collect();
            let order = rank_positions(rcatt, &all);
            let denom = (doc.token_ids.len() - 1).max(1) as f64;
            for (rank, &pos) in order.iter().enumerate() {
                if Vocab::is_special(doc.token_ids[pos]) {
                    special_count += 1;
                    special_rank_sum += rank as f64 / denom;
                    special_mass += rcatt[pos];
                }
            }
            total_mass += rcatt.iter().sum::<f64>();
        }
    }

    let specials = if include_specials && special_count > 0 {
        Some(SpecialsRow {
            count: special_count,
            mean_rank_fraction: special_rank_sum / special_count as f64,
            rcatt_share: special_mass / total_mass,
        })
    } else {
        None
    };

    Ok(DecileTable { buckets, specials })
}

/// Spearman rank correlation with average-rank tie handling.
///
/// Fails with an "undefined correlation" error when either input is
/// constant (or shorter than two), since rank variance is then zero.
pub fn spearman_rank_corr(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::config(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::ConstantInput);
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    pearson(&rx, &ry)
}

/// Average ranks (1-based): tied values share the mean of the ranks they
/// occupy.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("rank input is never NaN"));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share ranks i+1..=j+1.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantInput);
    }
    Ok(sxy / (sxx * syy).sqrt())
}
