//! Find token types whose very visibility hurts recall of weak facts.
//!
//! The detector builds a special dataset from the least-attended words,
//! then hides each frequent token type from attention in turn (the token
//! still occupies its position and can attend out; nothing may attend to
//! it). Types whose hiding improves accuracy on the detection half join
//! the invisible set; the held-out half confirms the joint effect.
//!
//! The corpus here carries a planted distractor: a meaningless type
//! sprinkled through every sentence, frequent enough to pass the count
//! threshold and noisy enough to hurt.
//!
//! ```text
//! cargo run --release --example detect_harmful_tokens
//! ```

use masklab::corpus::{generate_distractor_corpus, DistractorConfig};
use masklab::eval::{continual_pretrain, TrainRunConfig};
use masklab::mask::Policy;
use masklab::model::{init_params, AdamState, ModelConfig};
use masklab::visibility::{
    build_special_dataset, detect_harmful, harmful_candidates, DEFAULT_TAU,
};

fn main() -> masklab::Result<()> {
    let (bundle, distractor) = generate_distractor_corpus(11, &DistractorConfig::default())?;
    println!(
        "corpus of {} docs with distractor token {:?} (id {})",
        bundle.train_docs.len(),
        bundle.vocab.token(distractor),
        distractor,
    );

    // Detection needs a model that has absorbed the misleading
    // co-occurrence; a light random-policy run is enough.
    let model_cfg = ModelConfig::desk(bundle.vocab.len(), 11);
    let mut params = init_params(&model_cfg)?;
    let mut opt = AdamState::new(&model_cfg, Default::default())?;
    let run = TrainRunConfig {
        iterations: 40,
        policy: Policy::Random,
        batch_size: 8,
        lr: 3e-3,
        eval_every: 40,
        seed: 11,
        ..TrainRunConfig::default()
    };
    println!("training {} iterations...", run.iterations);
    continual_pretrain(&mut params, &mut opt, &bundle, None, &run)?;
    let special = build_special_dataset(&params, &bundle.train_docs, None)?;
    println!(
        "special dataset: {} detection items, {} confirmation items",
        special.val.len(),
        special.held.len(),
    );

    let candidates = harmful_candidates(&special.val, DEFAULT_TAU);
    println!("{} candidate types pass the frequency threshold {DEFAULT_TAU}", candidates.len());

    let set = detect_harmful(&params, &special, &candidates, DEFAULT_TAU)?;
    println!("\nbaseline accuracy on the detection half: {:.3}", set.acc0);
    for (id, acc) in &set.candidate_acc {
        println!(
            "  hide {:<8} -> {:.3}{}",
            bundle.vocab.token(*id),
            acc,
            if set.ids.contains(id) { "  (joins the invisible set)" } else { "" },
        );
    }

    println!(
        "\ninvisible set: {{{}}}",
        set.ids.iter().map(|&id| bundle.vocab.token(id)).collect::<Vec<_>>().join(", "),
    );
    if let (Some(h0), Some(hj)) = (set.held_acc0, set.held_acc_joint) {
        println!("confirmation half: {h0:.3} -> {hj:.3} with the whole set hidden");
    }
    Ok(())
}
