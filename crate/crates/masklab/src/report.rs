//! Run reports: deterministic JSON artifacts plus cross-seed comparison.
//!
//! One `EvalReport` captures everything a finished training run produced:
//! final probe accuracies, the knowledge-class split, the attention decile
//! table with its rank correlation, and the validation timeline. Reports
//! carry the bundle hash and a config hash (seed and policy excluded) so
//! runs that differ only in seed or policy land in the same comparison
//! group, and nothing else can be merged by accident.
//!
//! Reports deliberately contain no timestamps, hostnames, or paths: two
//! runs with identical inputs serialize to identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::{decile_kb_table, received_attention, DecileTable};
use crate::corpus::{DatasetBundle, Task};
use crate::eval::{accuracy_by_knowledge_class, evaluate_cloze, TimelinePoint, TrainRunConfig};
use crate::mask::Policy;
use crate::model::{forward, Parameters};
use crate::visibility::InvisibleSet;
use crate::{Error, Result};

/// Lowercase hex sha256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Hash of everything that must match for two runs to be comparable.
///
/// Seed and policy are stripped: they are the axes a comparison varies.
/// The model-init seed is also stripped since each run seeds its own
/// initialization from the run seed.
pub fn comparable_config_hash(bundle_hash: &str, run: &TrainRunConfig) -> Result<String> {
    let mut run_v = serde_json::to_value(run)?;
    let obj = run_v.as_object_mut().expect("config serializes to an object");
    obj.remove("seed");
    obj.remove("policy");
    let key = serde_json::json!({ "bundle": bundle_hash, "run": run_v });
    Ok(sha256_hex(serde_json::to_string(&key)?.as_bytes()))
}

/// Everything a finished run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: Policy,
    pub seed: u64,
    pub bundle_hash: String,
    pub config_hash: String,
    pub iterations: usize,
    pub val_accuracy: f64,
    pub val_by_task: BTreeMap<Task, f64>,
    pub test_accuracy: f64,
    pub test_by_task: BTreeMap<Task, f64>,
    /// Whole-word cloze accuracy over knowledge-bearing words; absent when
    /// the corpus has none.
    pub kb_accuracy: Option<f64>,
    pub kf_accuracy: Option<f64>,
    pub decile_table: DecileTable,
    /// Rank correlation between attention decile and knowledge share;
    /// absent when either side is constant.
    pub spearman: Option<f64>,
    pub timeline: Vec<TimelinePoint>,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let mut accs = vec![self.val_accuracy, self.test_accuracy];
        accs.extend(self.val_by_task.values().chain(self.test_by_task.values()));
        accs.extend(self.kb_accuracy.iter().chain(self.kf_accuracy.iter()));
        if !accs.into_iter().all(unit) {
            return Err(Error::config("report accuracy outside [0, 1]"));
        }
        if self.timeline.windows(2).any(|w| w[0].iteration >= w[1].iteration) {
            return Err(Error::config("report timeline not increasing"));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<EvalReport> {
        let report: EvalReport = serde_json::from_str(&fs::read_to_string(path)?)?;
        report.validate()?;
        Ok(report)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Scores a trained model on the bundle and assembles its report.
///
/// The decile table and rank correlation come from the model's attention
/// over the training documents, the knowledge split from whole-word cloze
/// over the same documents, and the accuracies from the held-out probes.
pub fn build_report(
    params: &Parameters,
    bundle: &DatasetBundle,
    invisible: Option<&InvisibleSet>,
    run: &TrainRunConfig,
    timeline: Vec<TimelinePoint>,
) -> Result<EvalReport> {
    let val = evaluate_cloze(params, &bundle.val_probes, invisible)?;
    let test = evaluate_cloze(params, &bundle.test_probes, invisible)?;
    let split = accuracy_by_knowledge_class(params, &bundle.train_docs, invisible)?;

    let mut rcatts = Vec::with_capacity(bundle.train_docs.len());
    for doc in &bundle.train_docs {
        let trace = forward(params, &doc.token_ids, None)?;
        rcatts.push(received_attention(&trace));
    }
    let decile_table = decile_kb_table(&bundle.train_docs, &rcatts, false)?;
    let spearman = match decile_table.rank_correlation() {
        Ok(r) => Some(r),
        Err(Error::ConstantInput) => None,
        Err(e) => return Err(e),
    };

    let bundle_hash = bundle.content_hash()?;
    let report = EvalReport {
        policy: run.policy,
        seed: run.seed,
        config_hash: comparable_config_hash(&bundle_hash, run)?,
        bundle_hash,
        iterations: run.iterations,
        val_accuracy: val.accuracy,
        val_by_task: val.by_task,
        test_accuracy: test.accuracy,
        test_by_task: test.by_task,
        kb_accuracy: split.kb,
        kf_accuracy: split.kf,
        decile_table,
        spearman,
        timeline,
    };
    report.validate()?;
    Ok(report)
}

/// Appends a report to the store under its config hash; one JSON per line.
///
/// Files are append-only: merging reads a single file, so runs with
/// different bundles or training settings can never end up side by side.
/// Re-running an identical configuration reproduces identical bytes, and
/// an already-present line is not appended again.
pub fn append_report(root: impl AsRef<Path>, report: &EvalReport) -> Result<std::path::PathBuf> {
    report.validate()?;
    fs::create_dir_all(&root)?;
    let path = root.as_ref().join(format!("{}.jsonl", report.config_hash));
    let line = serde_json::to_string(report)?;
    if path.exists() && fs::read_to_string(&path)?.lines().any(|l| l == line) {
        return Ok(path);
    }
    let mut file = fs::OpenOptions::new().create(true).append(true).open(&path)?;
    writeln!(file, "{line}")?;
    Ok(path)
}

/// Reads every report accumulated under one config hash.
pub fn load_report_group(path: impl AsRef<Path>) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::new();
    for line in fs::read_to_string(path)?.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let report: EvalReport = serde_json::from_str(line)?;
        report.validate()?;
        reports.push(report);
    }
    Ok(reports)
}

/// Mean and sample standard deviation; std is 0 for a single value.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One policy's scores aggregated across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: Policy,
    pub seeds: Vec<u64>,
    pub val_mean: f64,
    pub val_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
    /// Test accuracy per task as (mean, std).
    pub by_task: BTreeMap<Task, (f64, f64)>,
}

/// Policy-by-task comparison over a set of same-config reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub bundle_hash: String,
    pub config_hash: String,
    /// Policies in first-seen order.
    pub rows: Vec<PolicySummary>,
}

impl ComparisonTable {
    fn baseline(&self) -> Option<&PolicySummary> {
        self.rows.iter().find(|r| r.policy == Policy::Random)
    }
}

/// Groups reports by policy and aggregates across seeds.
///
/// All reports must come from the same bundle and comparable config;
/// duplicate (policy, seed) pairs are rejected since they would silently
/// skew a mean.
pub fn merge_reports(reports: &[EvalReport]) -> Result<ComparisonTable> {
    let first = reports.first().ok_or(Error::EmptyCorpus)?;
    let mut order: Vec<Policy> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        if r.bundle_hash != first.bundle_hash {
            return Err(Error::config(format!(
                "cannot merge reports from different corpora ({} vs {})",
                &first.bundle_hash[..12.min(first.bundle_hash.len())],
                &r.bundle_hash[..12.min(r.bundle_hash.len())],
            )));
        }
        if r.config_hash != first.config_hash {
            return Err(Error::config("cannot merge reports with different training configs"));
        }
        if !order.contains(&r.policy) {
            order.push(r.policy);
        }
        groups.entry(r.policy.name()).or_default().push(r);
    }
    let mut rows = Vec::with_capacity(order.len());
    for policy in order {
        let group = &groups[policy.name()];
        let mut seeds: Vec<u64> = group.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config(format!("duplicate seed for policy {policy}")));
        }
        let collect = |f: &dyn Fn(&EvalReport) -> f64| -> Vec<f64> {
            group.iter().map(|r| f(r)).collect()
        };
        let (val_mean, val_std) = mean_std(&collect(&|r| r.val_accuracy));
        let (test_mean, test_std) = mean_std(&collect(&|r| r.test_accuracy));
        let mut by_task = BTreeMap::new();
        for task in group[0].test_by_task.keys() {
            let vals: Vec<f64> = group
                .iter()
                .filter_map(|r| r.test_by_task.get(task).copied())
                .collect();
            if vals.len() == group.len() {
                by_task.insert(*task, mean_std(&vals));
            }
        }
        rows.push(PolicySummary {
            policy,
            seeds,
            val_mean,
            val_std,
            test_mean,
            test_std,
            by_task,
        });
    }
    Ok(ComparisonTable {
        bundle_hash: first.bundle_hash.clone(),
        config_hash: first.config_hash.clone(),
        rows,
    })
}

/// Attention-analysis artifact: the decile table plus its correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionAnalysis {
    pub bundle_hash: String,
    pub table: DecileTable,
    /// Absent when either ranking is constant.
    pub spearman: Option<f64>,
}

impl AttentionAnalysis {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<AttentionAnalysis> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Renders a decile table with one row per attention bucket, lowest first.
pub fn render_decile_table(analysis: &AttentionAnalysis) -> String {
    let mut out = String::from("decile  tokens  kb_share\n");
    for (i, bucket) in analysis.table.buckets.iter().enumerate() {
        let share = match bucket.kb_proportion() {
            Some(p) => format!("{p:.3}"),
            None => "-".to_string(),
        };
        out.push_str(&format!("{i:>6}  {:>6}  {share}\n", bucket.total_tokens));
    }
    if let Some(sp) = &analysis.table.specials {
        out.push_str(&format!(
            "specials: count={} mean_rank_fraction={:.3} rcatt_share={:.3}\n",
            sp.count, sp.mean_rank_fraction, sp.rcatt_share
        ));
    }
    match analysis.spearman {
        Some(r) => out.push_str(&format!("spearman(bucket, kb_share) = {r:+.4}\n")),
        None => out.push_str("spearman(bucket, kb_share) undefined: constant ranking\n"),
    }
    out
}

fn cell(mean: f64, std: f64, delta: Option<f64>) -> String {
    match delta {
        Some(d) => format!("{mean:.3} ±{std:.3} ({d:+.3})"),
        None => format!("{mean:.3} ±{std:.3}"),
    }
}

/// Renders the comparison as an aligned text table.
///
/// Rows are policies, columns the per-task test accuracies plus overall
/// val/test. When a random-policy row is present every cell carries its
/// delta against that baseline in parentheses; the baseline row shows
/// (+0.000) against itself.
pub fn render_comparison(table: &ComparisonTable) -> String {
    let tasks: Vec<Task> = {
        let mut seen = Vec::new();
        for row in &table.rows {
            for task in row.by_task.keys() {
                if !seen.contains(task) {
                    seen.push(*task);
                }
            }
        }
        seen
    };
    let baseline = table.baseline().cloned();
    let mut header = vec!["policy".to_string(), "seeds".to_string()];
    header.extend(tasks.iter().map(|t| t.to_string()));
    header.push("val".to_string());
    header.push("test".to_string());

    let mut grid = vec![header];
    for row in &table.rows {
        let mut cells = vec![row.policy.name().to_string(), row.seeds.len().to_string()];
        for task in &tasks {
            cells.push(match row.by_task.get(task) {
                Some(&(mean, std)) => {
                    let delta = baseline
                        .as_ref()
                        .and_then(|b| b.by_task.get(task))
                        .map(|&(bm, _)| mean - bm);
                    cell(mean, std, delta)
                }
                None => "-".to_string(),
            });
        }
        let val_delta = baseline.as_ref().map(|b| row.val_mean - b.val_mean);
        let test_delta = baseline.as_ref().map(|b| row.test_mean - b.test_mean);
        cells.push(cell(row.val_mean, row.val_std, val_delta));
        cells.push(cell(row.test_mean, row.test_std, test_delta));
        grid.push(cells);
    }

    let width: Vec<usize> = (0..grid[0].len())
        .map(|c| grid.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in grid.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s:<w$}", w = width[c]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("  "));
            out.push('\n');
        }
    }
    out
}
