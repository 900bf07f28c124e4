//! Forward pass of the pre-layer-norm transformer encoder.
//!
//! The architecture, in evaluation order per layer:
//!
//! ```text
//! x   = tok_emb[seq] + pos_emb[0..n]
//! x   = x + MultiHead(LayerNorm1(x))        (additive visibility bias here)
//! x   = x + W2 gelu(W1 LayerNorm2(x))
//! h   = LayerNormF(x)                       (after the last layer)
//! out = h W_out + b_out                     (untied MLM head)
//! ```
//!
//! Per-head attention is `softmax(q k^T / sqrt(d_k) + bias) v` with the
//! optional bias shared by every layer and head of one call. Everything is
//! f64 and the backward pass in `loss.rs` mirrors this file exactly, so the
//! whole model is finite-difference checkable.

use ndarray::{s, Array1, Array2, Array3};

use super::bias::VisibilityBias;
use super::params::{LayerParams, Parameters};
use crate::corpus::TokenId;
use crate::{Error, Result};

pub(crate) const LN_EPS: f64 = 1e-5;

/// sqrt(2/pi), used by the tanh form of gelu.
pub(crate) const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044715;

pub(crate) fn gelu(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

/// Exact derivative of the tanh-form gelu above, so finite differences of
/// `gelu` agree with it to machine precision.
pub(crate) fn gelu_prime(x: f64) -> f64 {
    let x2 = x * x;
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x2 * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x2)
}

/// Everything an analysis pass wants from one forward call.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `(n, vocab)` prediction scores per position.
    pub logits: Array2<f64>,
    /// Post-softmax attention per layer, each `(n_heads, n, n)`; every row
    /// sums to one and blocked entries are exactly zero.
    pub attention: Vec<Array3<f64>>,
    /// Residual stream: `hidden[0]` is the embedding sum, `hidden[l]` the
    /// output of layer `l`.
    pub hidden: Vec<Array2<f64>>,
    /// Residual stream after the final layer norm.
    pub final_hidden: Array2<f64>,
}

impl ForwardTrace {
    pub fn seq_len(&self) -> usize {
        self.logits.nrows()
    }
}

/// Row statistics saved for the layer-norm backward pass.
pub(crate) struct LnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

pub(crate) struct LayerCache {
    pub xn1: Array2<f64>,
    pub ln1: LnCache,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    pub attn: Array3<f64>,
    pub ctx: Array2<f64>,
    pub xn2: Array2<f64>,
    pub ln2: LnCache,
    pub z1: Array2<f64>,
    pub h1: Array2<f64>,
}

pub(crate) struct Cache {
    pub layers: Vec<LayerCache>,
    pub lnf: LnCache,
}

pub(crate) fn layer_norm(
    x: &Array2<f64>,
    g: &Array1<f64>,
    b: &Array1<f64>,
) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = Array2::zeros(x.raw_dim());
    let mut inv_std = Array1::zeros(x.nrows());
    for (i, row) in x.outer_iter().enumerate() {
        let mu = row.sum() / d;
        let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / d;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = inv;
        for (j, &v) in row.iter().enumerate() {
            xhat[[i, j]] = (v - mu) * inv;
        }
    }
    let mut y = xhat.clone();
    for mut row in y.rows_mut() {
        row *= &g.view();
        row += &b.view();
    }
    (y, LnCache { xhat, inv_std })
}

fn add_row_bias(mut m: Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    for mut row in m.rows_mut() {
        row += &b.view();
    }
    m
}

fn softmax_rows_in_place(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - m).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
}

fn attention_block(
    l: &LayerParams,
    xn: &Array2<f64>,
    bias: Option<&VisibilityBias>,
    n_heads: usize,
    d_k: usize,
) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array3<f64>, Array2<f64>) {
    let n = xn.nrows();
    let q = add_row_bias(xn.dot(&l.wq), &l.bq);
    let k = add_row_bias(xn.dot(&l.wk), &l.bk);
    let v = add_row_bias(xn.dot(&l.wv), &l.bv);
    let scale = 1.0 / (d_k as f64).sqrt();

    let mut attn = Array3::zeros((n_heads, n, n));
    let mut ctx = Array2::zeros((n, n_heads * d_k));
    for h in 0..n_heads {
        let cols = h * d_k..(h + 1) * d_k;
        let qh = q.slice(s![.., cols.clone()]);
        let kh = k.slice(s![.., cols.clone()]);
        let vh = v.slice(s![.., cols.clone()]);
        let mut scores = qh.dot(&kh.t());
        scores.mapv_inplace(|x| x * scale);
        if let Some(b) = bias {
            for (r, mut row) in scores.rows_mut().into_iter().enumerate() {
                b.apply_row(r, row.as_slice_mut().expect("contiguous score row"));
            }
        }
        softmax_rows_in_place(&mut scores);
        ctx.slice_mut(s![.., cols]).assign(&scores.dot(&vh));
        attn.slice_mut(s![h, .., ..]).assign(&scores);
    }
    (q, k, v, attn, ctx)
}

fn validate_inputs(
    params: &Parameters,
    seq: &[TokenId],
    bias: Option<&VisibilityBias>,
) -> Result<()> {
    let cfg = &params.config;
    if seq.is_empty() {
        return Err(Error::config("empty input sequence"));
    }
    if seq.len() > cfg.max_len {
        return Err(Error::SequenceTooLong {
            len: seq.len(),
            max: cfg.max_len,
        });
    }
    for &t in seq {
        if t >= cfg.vocab_size {
            return Err(Error::TokenOutOfRange {
                id: t,
                vocab: cfg.vocab_size,
            });
        }
    }
    if let Some(b) = bias {
        if b.len() != seq.len() {
            return Err(Error::config(format!(
                "visibility bias covers {} positions but the sequence has {}",
                b.len(),
                seq.len()
            )));
        }
    }
    Ok(())
}

pub(crate) fn forward_cached(
    params: &Parameters,
    seq: &[TokenId],
    bias: Option<&VisibilityBias>,
) -> Result<(ForwardTrace, Cache)> {
    validate_inputs(params, seq, bias)?;
    let cfg = &params.config;
    let n = seq.len();
    let d = cfg.d_model;

    let mut x = Array2::zeros((n, d));
    for (i, &t) in seq.iter().enumerate() {
        let mut row = x.row_mut(i);
        row.assign(&params.tok_emb.row(t));
        row += &params.pos_emb.row(i);
    }

    let mut hidden = Vec::with_capacity(cfg.n_layers + 1);
    hidden.push(x.clone());
    let mut attention = Vec::with_capacity(cfg.n_layers);
    let mut layer_caches = Vec::with_capacity(cfg.n_layers);

    for l in &params.layers {
        let (xn1, ln1) = layer_norm(&x, &l.ln1_g, &l.ln1_b);
        let (q, k, v, attn, ctx) = attention_block(l, &xn1, bias, cfg.n_heads, cfg.d_k);
        x = x + add_row_bias(ctx.dot(&l.wo), &l.bo);

        let (xn2, ln2) = layer_norm(&x, &l.ln2_g, &l.ln2_b);
        let z1 = add_row_bias(xn2.dot(&l.w1), &l.b1);
        let h1 = z1.mapv(gelu);
        x = x + add_row_bias(h1.dot(&l.w2), &l.b2);

        hidden.push(x.clone());
        attention.push(attn.clone());
        layer_caches.push(LayerCache {
            xn1,
            ln1,
            q,
            k,
            v,
            attn,
            ctx,
            xn2,
            ln2,
            z1,
            h1,
        });
    }

    let (final_hidden, lnf) = layer_norm(&x, &params.lnf_g, &params.lnf_b);
    let logits = add_row_bias(final_hidden.dot(&params.out_w), &params.out_b);

    // Finite parameters can still overflow the activations; every NaN or
    // infinity anywhere in the network surfaces in the logits through the
    // residual stream, so one check here covers the whole pass.
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::Diverged {
            iteration: 0,
            msg: "non-finite logits in the forward pass".into(),
        });
    }

    Ok((
        ForwardTrace {
            logits,
            attention,
            hidden,
            final_hidden,
        },
        Cache {
            layers: layer_caches,
            lnf,
        },
    ))
}

/// Index of the largest logit; ties go to the lowest id.
pub(crate) fn argmax_logit(row: ndarray::ArrayView1<f64>) -> usize {
    row.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("logits are finite").then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .expect("logit rows are never empty")
}

/// Runs the encoder over one sequence.
///
/// The optional visibility bias is applied identically in every layer and
/// head. Attention rows in the returned trace always sum to one; entries
/// blocked by the bias are exactly zero because the blocking offset pushes
/// `exp` into underflow.
pub fn forward(
    params: &Parameters,
    seq: &[TokenId],
    bias: Option<&VisibilityBias>,
) -> Result<ForwardTrace> {
    forward_cached(params, seq, bias).map(|(trace, _)| trace)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::super::bias::build_visibility_bias;
    use super::super::config::ModelConfig;
    use super::super::params::init_params;
    use super::*;

    fn tiny_params(vocab: usize, seed: u64) -> Parameters {
        init_params(&ModelConfig::desk(vocab, seed)).unwrap()
    }

    #[test]
    fn shapes_line_up() {
        let p = tiny_params(20, 1);
        let t = forward(&p, &[0, 4, 5, 6, 1], None).unwrap();
        assert_eq!(t.logits.shape(), &[5, 20]);
        assert_eq!(t.attention.len(), 2);
        assert_eq!(t.attention[0].shape(), &[4, 5, 5]);
        assert_eq!(t.hidden.len(), 3);
        assert_eq!(t.final_hidden.shape(), &[5, 64]);
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let p = tiny_params(30, 2);
        let t = forward(&p, &[0, 7, 9, 11, 13, 1], None).unwrap();
        for layer in &t.attention {
            for h in 0..layer.shape()[0] {
                for r in 0..layer.shape()[1] {
                    let row_sum: f64 = layer.slice(s![h, r, ..]).sum();
                    assert!((row_sum - 1.0).abs() < 1e-12, "row sum {row_sum}");
                }
            }
        }
    }

    #[test]
    fn zeroed_query_and_key_weights_give_uniform_attention() {
        let mut p = tiny_params(20, 3);
        for l in &mut p.layers {
            l.wq.fill(0.0);
            l.wk.fill(0.0);
            l.bq.fill(0.0);
            l.bk.fill(0.0);
        }
        let t = forward(&p, &[4, 5], None).unwrap();
        for layer in &t.attention {
            for h in 0..layer.shape()[0] {
                for r in 0..2 {
                    assert!((layer[[h, r, 0]] - 0.5).abs() < 1e-15);
                    assert!((layer[[h, r, 1]] - 0.5).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn blocked_entries_are_exactly_zero_and_rows_still_sum_to_one() {
        let p = tiny_params(25, 4);
        let seq = [0usize, 5, 6, 7, 8, 1];
        let invisible: BTreeSet<usize> = [6, 8].into_iter().collect();
        let bias = build_visibility_bias(&seq, &invisible);
        let t = forward(&p, &seq, Some(&bias)).unwrap();
        for layer in &t.attention {
            for h in 0..layer.shape()[0] {
                for r in 0..seq.len() {
                    for c in 0..seq.len() {
                        let a = layer[[h, r, c]];
                        if invisible.contains(&seq[c]) && r != c {
                            assert_eq!(a, 0.0, "head {h} row {r} col {c}");
                        }
                    }
                    let row_sum: f64 = layer.slice(s![h, r, ..]).sum();
                    assert!((row_sum - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn empty_bias_is_bitwise_identical_to_no_bias() {
        let p = tiny_params(25, 5);
        let seq = [0usize, 5, 6, 7, 1];
        let bias = build_visibility_bias(&seq, &BTreeSet::new());
        let a = forward(&p, &seq, None).unwrap();
        let b = forward(&p, &seq, Some(&bias)).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.final_hidden, b.final_hidden);
        for (x, y) in a.attention.iter().zip(&b.attention) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn all_types_invisible_collapses_attention_to_identity() {
        // With every column blocked off-diagonal, each row's only live
        // entry is itself, so softmax returns exactly one there.
        let p = tiny_params(25, 6);
        let seq = [4usize, 5, 6];
        let invisible: BTreeSet<usize> = seq.iter().copied().collect();
        let bias = build_visibility_bias(&seq, &invisible);
        let t = forward(&p, &seq, Some(&bias)).unwrap();
        for layer in &t.attention {
            for h in 0..layer.shape()[0] {
                for r in 0..3 {
                    for c in 0..3 {
                        let expect = if r == c { 1.0 } else { 0.0 };
                        assert_eq!(layer[[h, r, c]], expect);
                    }
                }
            }
        }
    }

    #[test]
    fn input_validation_errors() {
        let p = tiny_params(10, 7);
        assert!(matches!(
            forward(&p, &[], None),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            forward(&p, &[11], None),
            Err(Error::TokenOutOfRange { id: 11, vocab: 10 })
        ));
        let long: Vec<usize> = vec![4; 65];
        assert!(matches!(
            forward(&p, &long, None),
            Err(Error::SequenceTooLong { len: 65, max: 64 })
        ));
        let bias = build_visibility_bias(&[4, 5], &BTreeSet::new());
        assert!(forward(&p, &[4, 5, 6], Some(&bias)).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let p = tiny_params(40, 8);
        let seq = [0usize, 9, 12, 15, 1];
        let a = forward(&p, &seq, None).unwrap();
        let b = forward(&p, &seq, None).unwrap();
        assert_eq!(a.logits, b.logits);
    }

    #[test]
    fn gelu_matches_reference_points() {
        // gelu(0) = 0; large inputs approach the identity; negative tail
        // approaches zero.
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(6.0) - 6.0).abs() < 1e-6);
        assert!(gelu(-6.0).abs() < 1e-6);
        // Finite differences agree with the analytic derivative.
        for &x in &[-2.5, -0.7, 0.0, 0.3, 1.9] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_prime(x)).abs() < 1e-8, "x={x}");
        }
    }
}
