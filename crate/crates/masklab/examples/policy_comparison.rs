//! Selective policies against the random baseline, two seeds each.
//!
//! Trains one model per (policy, seed), builds a report for each run, and
//! merges them into the comparison table: policy rows, task columns,
//! deltas against the random baseline in parentheses. A full five-seed
//! comparison is what the acceptance suite runs; two seeds keep this
//! example quick while showing the machinery end to end.
//!
//! ```text
//! cargo run --release --example policy_comparison
//! ```

use masklab::corpus::{generate_synthetic_corpus, GenConfig};
use masklab::eval::{continual_pretrain, TrainRunConfig};
use masklab::mask::Policy;
use masklab::model::{init_params, AdamState, ModelConfig};
use masklab::report::{build_report, merge_reports, render_comparison};

fn main() -> masklab::Result<()> {
    let bundle = generate_synthetic_corpus(1, 100, &GenConfig::default())?;

    let mut reports = Vec::new();
    for policy in [Policy::Random, Policy::SelI, Policy::SelA] {
        for seed in [1, 2] {
            let run = TrainRunConfig {
                iterations: 60,
                policy,
                batch_size: 8,
                lr: 3e-3,
                eval_every: 30,
                seed,
                ..TrainRunConfig::default()
            };
            let model_cfg = ModelConfig::desk(bundle.vocab.len(), seed);
            let mut params = init_params(&model_cfg)?;
            let mut opt = AdamState::new(&model_cfg, run.adam)?;
            let timeline = continual_pretrain(&mut params, &mut opt, &bundle, None, &run)?;
            let report = build_report(&params, &bundle, None, &run, timeline)?;
            println!("{policy} seed {seed}: val {:.3}", report.val_accuracy);
            reports.push(report);
        }
    }

    let table = merge_reports(&reports)?;
    println!("\n{}", render_comparison(&table));
    Ok(())
}
