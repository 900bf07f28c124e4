//! A dataset bundle: vocabulary, training documents, and probe sets that
//! travel together on disk.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::document::{Document, ProbeItem};
use super::jsonl::{
    load_annotated_docs, load_probes, write_docs_to, write_probes_to,
};
use super::vocab::Vocab;
use crate::report::sha256_hex;
use crate::{Error, Result};

const VOCAB_FILE: &str = "vocab.json";
const TRAIN_FILE: &str = "train_docs.jsonl";
const VAL_FILE: &str = "val_probes.jsonl";
const TEST_FILE: &str = "test_probes.jsonl";
const MANIFEST_FILE: &str = "manifest.json";

/// Everything one experiment consumes: train documents plus validation and
/// test probes over a shared vocabulary.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub vocab: Vocab,
    pub train_docs: Vec<Document>,
    pub val_probes: Vec<ProbeItem>,
    pub test_probes: Vec<ProbeItem>,
}

/// Summary written alongside a saved bundle.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct BundleManifest {
    pub n_train_docs: usize,
    pub n_val_probes: usize,
    pub n_test_probes: usize,
    pub vocab_size: usize,
    /// sha256 over the serialized vocabulary, documents, and probes.
    pub bundle_hash: String,
}

impl DatasetBundle {
    /// Structural checks plus the closed-world property: every probe answer
    /// token occurs somewhere in the training documents.
    pub fn validate(&self) -> Result<()> {
        if self.train_docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let vs = self.vocab.len();
        let mut train_tokens: HashSet<usize> = HashSet::new();
        for doc in &self.train_docs {
            doc.validate(vs)?;
            train_tokens.extend(doc.token_ids.iter().copied());
        }
        for probe in self.val_probes.iter().chain(&self.test_probes) {
            probe.validate(vs)?;
            for &a in &probe.answer_ids {
                if !train_tokens.contains(&a) {
                    return Err(Error::config(format!(
                        "probe answer {:?} never occurs in training documents",
                        self.vocab.token(a)
                    )));
                }
            }
        }
        Ok(())
    }

    /// Canonical byte serialization of each component, used for hashing and
    /// persistence alike so the hash always matches what is on disk.
    fn component_bytes(&self) -> Result<[Vec<u8>; 4]> {
        let mut vocab_bytes = serde_json::to_vec(&self.vocab)?;
        vocab_bytes.push(b'\n');
        let mut docs = Vec::new();
        write_docs_to(&mut docs, &self.train_docs, &self.vocab)?;
        let mut val = Vec::new();
        write_probes_to(&mut val, &self.val_probes, &self.vocab)?;
        let mut test = Vec::new();
        write_probes_to(&mut test, &self.test_probes, &self.vocab)?;
        Ok([vocab_bytes, docs, val, test])
    }

    /// Content hash covering every component, stable across runs.
    pub fn content_hash(&self) -> Result<String> {
        let parts = self.component_bytes()?;
        let mut all = Vec::new();
        for p in &parts {
            all.extend_from_slice(p);
        }
        Ok(sha256_hex(&all))
    }

    fn manifest(&self) -> Result<BundleManifest> {
        Ok(BundleManifest {
            n_train_docs: self.train_docs.len(),
            n_val_probes: self.val_probes.len(),
            n_test_probes: self.test_probes.len(),
            vocab_size: self.vocab.len(),
            bundle_hash: self.content_hash()?,
        })
    }

    /// Writes the bundle into `dir`, creating it if needed, and returns the
    /// manifest that was stored next to the data files.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<BundleManifest> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let parts = self.component_bytes()?;
        fs::write(dir.join(VOCAB_FILE), &parts[0])?;
        fs::write(dir.join(TRAIN_FILE), &parts[1])?;
        fs::write(dir.join(VAL_FILE), &parts[2])?;
        fs::write(dir.join(TEST_FILE), &parts[3])?;
        let manifest = self.manifest()?;
        let mut manifest_bytes = serde_json::to_vec_pretty(&manifest)?;
        manifest_bytes.push(b'\n');
        fs::write(dir.join(MANIFEST_FILE), manifest_bytes)?;
        Ok(manifest)
    }

    /// Reads a bundle previously written by [`DatasetBundle::save_dir`] and
    /// re-validates it.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<DatasetBundle> {
        let dir = dir.as_ref();
        let vocab: Vocab = serde_json::from_slice(&fs::read(dir.join(VOCAB_FILE))?)?;
        let bundle = DatasetBundle {
            train_docs: load_annotated_docs(dir.join(TRAIN_FILE), &vocab)?,
            val_probes: load_probes(dir.join(VAL_FILE), &vocab)?,
            test_probes: load_probes(dir.join(TEST_FILE), &vocab)?,
            vocab,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::super::generate::{generate_synthetic_corpus, GenConfig};
    use super::*;

    #[test]
    fn save_then_load_round_trips_and_hash_is_stable() {
        let bundle = generate_synthetic_corpus(5, 12, &GenConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = bundle.save_dir(dir.path()).unwrap();
        assert_eq!(manifest.n_train_docs, 12);
        assert_eq!(manifest.bundle_hash.len(), 64);

        let back = DatasetBundle::load_dir(dir.path()).unwrap();
        assert_eq!(back.train_docs, bundle.train_docs);
        assert_eq!(back.val_probes, bundle.val_probes);
        assert_eq!(back.test_probes, bundle.test_probes);
        assert_eq!(back.content_hash().unwrap(), manifest.bundle_hash);

        // Saving again produces the same bytes.
        let manifest2 = back.save_dir(dir.path()).unwrap();
        assert_eq!(manifest, manifest2);
    }

    #[test]
    fn closed_world_violation_is_caught() {
        let mut bundle = generate_synthetic_corpus(5, 4, &GenConfig::default()).unwrap();
        // Point an answer at a token that only occurs in probe queries.
        let q_only = bundle.vocab.id("?").unwrap();
        bundle.val_probes[0].answer_ids[0] = q_only;
        assert!(bundle.validate().is_err());
    }
}
