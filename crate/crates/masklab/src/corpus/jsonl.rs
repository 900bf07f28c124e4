//! JSONL persistence for annotated documents and probes.
//!
//! Tokens are stored as strings so the files are grep-able and independent
//! of any particular vocabulary ordering; ids are resolved against a
//! [`Vocab`] at load time. All parse failures carry the 1-based line number
//! of the offending record.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::document::{Document, ProbeItem, Span, Task};
use super::vocab::Vocab;
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
struct DocRecord {
    tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kb_labels: Option<Vec<bool>>,
    word_spans: Vec<Span>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entity_spans: Option<Vec<Span>>,
}

#[derive(Serialize, Deserialize)]
struct ProbeRecord {
    query: Vec<String>,
    answers: Vec<String>,
    task: Task,
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse {
        line,
        msg: msg.to_string(),
    }
}

pub(crate) fn write_docs_to(
    mut w: impl Write,
    docs: &[Document],
    vocab: &Vocab,
) -> Result<()> {
    for doc in docs {
        let rec = DocRecord {
            tokens: vocab.decode(&doc.token_ids)?,
            kb_labels: doc.kb_labels.clone(),
            word_spans: doc.word_spans.clone(),
            entity_spans: doc.entity_spans.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one JSON object per document.
pub fn save_annotated_docs(path: impl AsRef<Path>, docs: &[Document], vocab: &Vocab) -> Result<()> {
    write_docs_to(BufWriter::new(File::create(path)?), docs, vocab)
}

/// Reads documents back, resolving tokens against `vocab`.
///
/// Unknown tokens, misaligned labels, and malformed spans all fail with the
/// line number of the record that caused them. Blank lines are not allowed.
pub fn load_annotated_docs(path: impl AsRef<Path>, vocab: &Vocab) -> Result<Vec<Document>> {
    let reader = BufReader::new(File::open(path)?);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let rec: DocRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, e))?;
        if let Some(labels) = &rec.kb_labels {
            if labels.len() != rec.tokens.len() {
                return Err(parse_err(
                    lineno,
                    format!(
                        "kb_labels length {} does not match {} tokens",
                        labels.len(),
                        rec.tokens.len()
                    ),
                ));
            }
        }
        let token_ids = vocab
            .encode(&rec.tokens)
            .map_err(|e| parse_err(lineno, e))?;
        let doc = Document {
            token_ids,
            kb_labels: rec.kb_labels,
            entity_spans: rec.entity_spans,
            word_spans: rec.word_spans,
        };
        doc.validate(vocab.len()).map_err(|e| parse_err(lineno, e))?;
        docs.push(doc);
    }
    Ok(docs)
}

pub(crate) fn write_probes_to(
    mut w: impl Write,
    probes: &[ProbeItem],
    vocab: &Vocab,
) -> Result<()> {
    for p in probes {
        let rec = ProbeRecord {
            query: vocab.decode(&p.query_ids)?,
            answers: vocab.decode(&p.answer_ids)?,
            task: p.task,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one JSON object per probe.
pub fn save_probes(path: impl AsRef<Path>, probes: &[ProbeItem], vocab: &Vocab) -> Result<()> {
    write_probes_to(BufWriter::new(File::create(path)?), probes, vocab)
}

/// Reads probes back, resolving tokens against `vocab`.
pub fn load_probes(path: impl AsRef<Path>, vocab: &Vocab) -> Result<Vec<ProbeItem>> {
    let reader = BufReader::new(File::open(path)?);
    let mut probes = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let rec: ProbeRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, e))?;
        let item = ProbeItem {
            query_ids: vocab.encode(&rec.query).map_err(|e| parse_err(lineno, e))?,
            answer_ids: vocab
                .encode(&rec.answers)
                .map_err(|e| parse_err(lineno, e))?,
            task: rec.task,
        };
        item.validate(vocab.len()).map_err(|e| parse_err(lineno, e))?;
        probes.push(item);
    }
    Ok(probes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::{build_vocab, MASK};

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn sample() -> (Vec<Document>, Vocab) {
        let vocab = build_vocab(&[words("Alda Vey sails to Port Maren .")]).unwrap();
        let enc = |s: &str| vocab.encode(&words(s)).unwrap();
        let d1 = Document {
            token_ids: enc("<s> Alda Vey sails . </s>"),
            kb_labels: Some(vec![false, true, true, true, false, false]),
            entity_spans: Some(vec![(1, 3)]),
            word_spans: vec![(1, 3), (3, 4), (4, 5)],
        };
        let d2 = Document {
            token_ids: enc("<s> Port Maren . </s>"),
            kb_labels: Some(vec![false, true, true, false, false]),
            entity_spans: None,
            word_spans: vec![(1, 3), (3, 4)],
        };
        (vec![d1, d2], vocab)
    }

    #[test]
    fn docs_round_trip_identically() {
        let (docs, vocab) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("docs.jsonl");
        save_annotated_docs(&path, &docs, &vocab).unwrap();
        let back = load_annotated_docs(&path, &vocab).unwrap();
        assert_eq!(docs, back);
    }

    #[test]
    fn empty_file_loads_as_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("docs.jsonl");
        std::fs::write(&path, "").unwrap();
        let (_, vocab) = sample();
        assert!(load_annotated_docs(&path, &vocab).unwrap().is_empty());
    }

    #[test]
    fn corrupt_record_reports_its_line_number() {
        let (docs, vocab) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("docs.jsonl");
        save_annotated_docs(&path, &docs, &vocab).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{not json\n");
        std::fs::write(&path, text).unwrap();
        match load_annotated_docs(&path, &vocab) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn label_length_mismatch_reports_line_number() {
        let (_, vocab) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("docs.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"tokens":["<s>","sails","</s>"],"kb_labels":[false,true,true],"word_spans":[[1,2]]}"#,
                "\n",
                r#"{"tokens":["<s>","sails","</s>"],"kb_labels":[false,true],"word_spans":[[1,2]]}"#,
                "\n",
            ),
        )
        .unwrap();
        match load_annotated_docs(&path, &vocab) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("kb_labels"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_token_reports_line_number() {
        let (_, vocab) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("docs.jsonl");
        std::fs::write(
            &path,
            concat!(r#"{"tokens":["<s>","zorp","</s>"],"word_spans":[[1,2]]}"#, "\n"),
        )
        .unwrap();
        match load_annotated_docs(&path, &vocab) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 1);
                assert!(msg.contains("zorp"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn probes_round_trip_identically() {
        let (_, vocab) = sample();
        let probes = vec![ProbeItem {
            query_ids: vec![0, vocab.id("Alda").unwrap(), MASK, 1],
            answer_ids: vec![vocab.id("sails").unwrap()],
            task: Task::Cbqa,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probes.jsonl");
        save_probes(&path, &probes, &vocab).unwrap();
        assert_eq!(load_probes(&path, &vocab).unwrap(), probes);
    }
}
