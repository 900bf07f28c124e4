//! Generate a synthetic fact corpus and look inside it.
//!
//! Every document states one (subject, relation, object) fact in a
//! templated sentence; the generator records which tokens carry the fact
//! (knowledge-bearing) and where the entity spans sit. Run with:
//!
//! ```text
//! cargo run --example generate_corpus
//! ```

use masklab::corpus::{generate_synthetic_corpus, GenConfig};

fn main() -> masklab::Result<()> {
    let bundle = generate_synthetic_corpus(7, 12, &GenConfig::default())?;

    println!(
        "bundle: {} train docs, {} val probes, {} test probes, vocab {}",
        bundle.train_docs.len(),
        bundle.val_probes.len(),
        bundle.test_probes.len(),
        bundle.vocab.len(),
    );

    // Render a few documents with knowledge-bearing words in UPPERCASE.
    println!("\ntraining documents (knowledge-bearing words uppercased):");
    for doc in bundle.train_docs.iter().take(5) {
        let mut words = Vec::with_capacity(doc.n_words());
        for (w, &(s, e)) in doc.word_spans.iter().enumerate() {
            let text: Vec<&str> = doc.token_ids[s..e]
                .iter()
                .map(|&id| bundle.vocab.token(id))
                .collect();
            let text = text.join("");
            words.push(if doc.word_is_kb(w)? { text.to_uppercase() } else { text });
        }
        println!("  {}", words.join(" "));
    }

    println!("\nval probes, one per task family:");
    let mut seen = std::collections::BTreeSet::new();
    for probe in &bundle.val_probes {
        if !seen.insert(probe.task) {
            continue;
        }
        let query: Vec<&str> = probe.query_ids.iter().map(|&id| bundle.vocab.token(id)).collect();
        let answer: Vec<&str> = probe.answer_ids.iter().map(|&id| bundle.vocab.token(id)).collect();
        println!("  [{}] {}  ->  {}", probe.task, query.join(" "), answer.join(" "));
    }

    // Bundles round-trip through a directory of JSON-lines files; the
    // manifest hash pins the exact content.
    let dir = std::env::temp_dir().join("masklab-example-bundle");
    let manifest = bundle.save_dir(&dir)?;
    println!("\nsaved to {} with hash {}", dir.display(), &manifest.bundle_hash[..16]);
    Ok(())
}
