//! Where does a trained model's attention go, relative to the facts?
//!
//! Trains a small model briefly, sums the attention each token receives
//! across all layers, heads, and query positions, then buckets tokens into
//! per-sentence attention deciles and reports the share of
//! knowledge-bearing tokens per bucket. On a trained model the share falls
//! as attention rises: the fact-carrying tokens are the *least* attended.
//!
//! ```text
//! cargo run --release --example attention_deciles
//! ```

use masklab::attention::{decile_kb_table, received_attention};
use masklab::corpus::{generate_synthetic_corpus, GenConfig};
use masklab::eval::{continual_pretrain, TrainRunConfig};
use masklab::mask::Policy;
use masklab::model::{forward, init_params, AdamState, ModelConfig};

fn main() -> masklab::Result<()> {
    let bundle = generate_synthetic_corpus(1, 100, &GenConfig::default())?;
    let model_cfg = ModelConfig::desk(bundle.vocab.len(), 1);
    let mut params = init_params(&model_cfg)?;
    let mut opt = AdamState::new(&model_cfg, Default::default())?;

    let run = TrainRunConfig {
        iterations: 60,
        policy: Policy::Random,
        batch_size: 8,
        lr: 3e-3,
        eval_every: 60,
        seed: 1,
        ..TrainRunConfig::default()
    };
    println!("training {} iterations under the random policy...", run.iterations);
    continual_pretrain(&mut params, &mut opt, &bundle, None, &run)?;

    let mut rcatts = Vec::with_capacity(bundle.train_docs.len());
    for doc in &bundle.train_docs {
        let trace = forward(&params, &doc.token_ids, None)?;
        rcatts.push(received_attention(&trace));
    }

    // Specials (BOS/EOS) get their own row instead of a bucket; they soak
    // up a large share of attention without carrying any knowledge.
    let table = decile_kb_table(&bundle.train_docs, &rcatts, true)?;
    println!("\ndecile  tokens  kb_share   (0 = least attended)");
    for (i, bucket) in table.buckets.iter().enumerate() {
        println!(
            "{i:>6}  {:>6}  {:.3}",
            bucket.total_tokens,
            bucket.kb_proportion().unwrap_or(f64::NAN),
        );
    }
    if let Some(sp) = &table.specials {
        println!(
            "specials: {} tokens, mean rank fraction {:.2}, {:.1}% of all attention",
            sp.count,
            sp.mean_rank_fraction,
            100.0 * sp.rcatt_share,
        );
    }
    println!("\nspearman(decile, kb_share) = {:+.4}", table.rank_correlation()?);
    Ok(())
}
