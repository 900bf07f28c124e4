//! The four mask policies, side by side on the same document.
//!
//! All policies spend the same two-phase budget (phase 1 from the policy's
//! candidate words, phase 2 uniform over the rest); they differ only in who
//! the candidates are. Random has none, Sel-I nominates words the current
//! model mispredicts, Sel-A the words receiving the least attention, and
//! the salient-span oracle masks whole annotated entities.
//!
//! ```text
//! cargo run --example mask_policies
//! ```

use masklab::corpus::{generate_synthetic_corpus, GenConfig};
use masklab::mask::{make_plan, masked_kb_ratio, Policy, PolicyConfig};
use masklab::model::{init_params, ModelConfig};
use masklab::seeds;

fn main() -> masklab::Result<()> {
    let bundle = generate_synthetic_corpus(3, 40, &GenConfig::default())?;
    let params = init_params(&ModelConfig::desk(bundle.vocab.len(), 3))?;
    let cfg = PolicyConfig::default();

    let doc = &bundle.train_docs[0];
    println!("document ({} words, budget {} masked):", doc.n_words(), {
        masklab::mask::mask_budget(doc.n_words(), &cfg)
    });

    for policy in Policy::ALL {
        let mut rng = seeds::rng(3, "example/plans");
        let plan = make_plan(&params, doc, None, policy, &cfg, &mut rng)?;
        let mut rendered = Vec::with_capacity(doc.n_words());
        for (w, &(s, e)) in doc.word_spans.iter().enumerate() {
            let text: Vec<&str> =
                doc.token_ids[s..e].iter().map(|&id| bundle.vocab.token(id)).collect();
            let text = text.join("");
            // Phase-1 picks in [brackets], phase-2 in (parens).
            rendered.push(if plan.phase1.contains(&w) {
                format!("[{text}]")
            } else if plan.phase2.contains(&w) {
                format!("({text})")
            } else {
                text
            });
        }
        println!("{:>10}: {}", policy.to_string(), rendered.join(" "));
    }

    // Over a whole bundle, the selective policies concentrate their masks
    // on knowledge-bearing tokens; the ratio below is masked-K-B over
    // masked-K-F tokens. An untrained model gives selective policies no
    // signal yet, so the three ratios start out close.
    println!("\nmasked K-B : K-F ratio over {} docs (untrained model):", bundle.train_docs.len());
    for policy in [Policy::Random, Policy::SelI, Policy::SelA, Policy::SsmOracle] {
        let mut rng = seeds::rng(3, "example/ratio");
        let plans: Vec<_> = bundle
            .train_docs
            .iter()
            .map(|d| make_plan(&params, d, None, policy, &cfg, &mut rng))
            .collect::<masklab::Result<_>>()?;
        println!("{:>10}: {:.3}", policy.to_string(), masked_kb_ratio(&plans, &bundle.train_docs)?);
    }
    Ok(())
}
