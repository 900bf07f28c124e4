//! Experiment driver; subcommands land here.
//!
//! Five subcommands cover the pipeline end to end: `gen-corpus` writes a
//! dataset bundle, `run` trains one (policy, visibility) configuration and
//! writes a checkpoint plus its report, `analyze` turns a checkpoint into
//! an attention decile table, `detect-invisible` runs harmful-token
//! detection on its own, and `report` merges per-run reports into the
//! policy comparison table.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error. The only
//! environment variable consulted is `MASKLAB_ROOT`, the directory that
//! receives checkpoints and reports when `--out-root` is not given.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::corpus::{generate_synthetic_corpus, DatasetBundle, GenConfig};
use crate::eval::{continual_pretrain, TrainRunConfig};
use crate::mask::Policy;
use crate::model::{init_params, AdamState, Checkpoint, ModelConfig};
use crate::report::{
    append_report, build_report, load_report_group, merge_reports,
    render_comparison, render_decile_table, AttentionAnalysis, EvalReport,
};
use crate::visibility::{
    build_special_dataset, detect_harmful, harmful_candidates, InvisibleSet, DEFAULT_TAU,
};
use crate::{attention, Error, Result};

/// Name of the environment variable giving the output root directory.
pub const ROOT_ENV: &str = "MASKLAB_ROOT";

#[derive(Parser)]
#[command(name = "masklab", version, about = "Mask-policy experiments on a desk-scale MLM")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic fact corpus bundle.
    GenCorpus(GenCorpusArgs),
    /// Train one (policy, visibility) configuration and write its report.
    Run(RunArgs),
    /// Compute the attention decile table for a checkpoint.
    Analyze(AnalyzeArgs),
    /// Detect harmful token types and write the invisible set.
    DetectInvisible(DetectArgs),
    /// Merge run reports into the policy comparison table.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenCorpusArgs {
    /// Generation seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of facts; at least 1.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    facts: u64,
    /// Directory to write the bundle into.
    #[arg(long, default_value = "bundle")]
    out: PathBuf,
    /// Fraction of training documents that get their bare triple appended.
    #[arg(long)]
    augment_fraction: Option<f64>,
    /// Probability that a sentence starts with an opener phrase.
    #[arg(long)]
    opener_prob: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Visibility {
    /// Train with ordinary full attention.
    None,
    /// Run harmful-token detection on the fresh model before training.
    Detect,
    /// Load a previously saved invisible set.
    File,
}

#[derive(Args)]
struct RunArgs {
    /// Bundle directory from gen-corpus.
    #[arg(long)]
    bundle: PathBuf,
    /// Mask policy: random, sel-i, sel-a, or ssm.
    #[arg(long, value_parser = Policy::from_str)]
    policy: Policy,
    /// Training iterations (full passes over the corpus).
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Validation cadence in iterations.
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Visibility::None)]
    visibility: Visibility,
    /// Invisible-set JSON, for --visibility file.
    #[arg(long, required_if_eq("visibility", "file"))]
    invisible_file: Option<PathBuf>,
    /// Candidate frequency threshold, for --visibility detect.
    #[arg(long)]
    tau: Option<f64>,
    /// JSON file of training-config defaults; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for checkpoints and reports (else $MASKLAB_ROOT, else
    /// ./masklab-runs).
    #[arg(long)]
    out_root: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Bundle directory with annotated documents.
    #[arg(long)]
    bundle: PathBuf,
    /// Checkpoint to analyze.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Add the separate row for BOS/EOS/PAD tokens.
    #[arg(long)]
    include_specials: bool,
    /// Where to write the JSON artifact.
    #[arg(long, default_value = "analysis.json")]
    out: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    /// Bundle directory providing the training documents.
    #[arg(long)]
    bundle: PathBuf,
    /// Model checkpoint to probe.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Candidate frequency threshold.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    /// Where to write the invisible-set JSON.
    #[arg(long, default_value = "invisible.json")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Report groups (.jsonl files from run) or directories of them.
    #[arg(required = true)]
    groups: Vec<PathBuf>,
}

/// Parses the process arguments, runs the selected command, and returns
/// the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Clap distinguishes usage errors (2) from --help/--version (0).
            let _ = err.print();
            return err.exit_code();
        }
    };
    let outcome = match cli.cmd {
        Cmd::GenCorpus(args) => cmd_gen_corpus(args),
        Cmd::Run(args) => cmd_run(args),
        Cmd::Analyze(args) => cmd_analyze(args),
        Cmd::DetectInvisible(args) => cmd_detect(args),
        Cmd::Report(args) => cmd_report(args),
    };
    match outcome {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    }
}

fn cmd_gen_corpus(args: GenCorpusArgs) -> Result<()> {
    let mut gen = GenConfig::default();
    if let Some(f) = args.augment_fraction {
        gen.augment_fraction = f;
    }
    if let Some(p) = args.opener_prob {
        gen.opener_prob = p;
    }
    let bundle = generate_synthetic_corpus(args.seed, args.facts as usize, &gen)?;
    let manifest = bundle.save_dir(&args.out)?;
    println!(
        "wrote bundle to {}: {} train docs, {} val probes, {} test probes, hash {}",
        args.out.display(),
        manifest.n_train_docs,
        manifest.n_val_probes,
        manifest.n_test_probes,
        manifest.bundle_hash,
    );
    Ok(())
}

fn out_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("masklab-runs"))
}

/// Stem shared by a run's checkpoint and report files.
fn run_stem(report: &EvalReport) -> String {
    format!(
        "{}-{}-s{}",
        &report.config_hash[..16],
        report.policy.name(),
        report.seed
    )
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let bundle = DatasetBundle::load_dir(&args.bundle)?;

    let mut run = match &args.config {
        Some(path) => serde_json::from_str::<TrainRunConfig>(&std::fs::read_to_string(path)?)?,
        None => TrainRunConfig::default(),
    };
    run.policy = args.policy;
    if let Some(v) = args.iters {
        run.iterations = v;
    }
    if let Some(v) = args.batch {
        run.batch_size = v;
    }
    if let Some(v) = args.lr {
        run.lr = v;
    }
    if let Some(v) = args.eval_every {
        run.eval_every = v;
    }
    if let Some(v) = args.seed {
        run.seed = v;
    }
    run.validate()?;

    let model_cfg = ModelConfig::desk(bundle.vocab.len(), run.seed);
    let mut params = init_params(&model_cfg)?;
    let mut opt = AdamState::new(&model_cfg, run.adam)?;

    let invisible = match args.visibility {
        Visibility::None => None,
        Visibility::File => {
            let path = args.invisible_file.as_ref().expect("required_if_eq enforces this");
            Some(InvisibleSet::load(path)?)
        }
        Visibility::Detect => {
            let tau = args.tau.unwrap_or(DEFAULT_TAU);
            let special = build_special_dataset(&params, &bundle.train_docs, None)?;
            let candidates = harmful_candidates(&special.val, tau);
            let set = detect_harmful(&params, &special, &candidates, tau)?;
            println!("detected {} invisible token type(s) at tau={tau}", set.ids.len());
            Some(set)
        }
    };

    let timeline = continual_pretrain(&mut params, &mut opt, &bundle, invisible.as_ref(), &run)?;
    let report = build_report(&params, &bundle, invisible.as_ref(), &run, timeline)?;

    let root = out_root(args.out_root);
    let reports_dir = root.join("reports");
    let ckpt_dir = root.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;

    let stem = run_stem(&report);
    let ckpt_path = ckpt_dir.join(format!("{stem}.json"));
    let checkpoint = Checkpoint {
        optimizer: Some(opt),
        invisible,
        run_seed: run.seed,
        iterations_done: run.iterations,
        ..Checkpoint::new(params, run.seed)
    };
    checkpoint.save(&ckpt_path)?;

    let report_path = reports_dir.join(format!("{stem}.json"));
    let group_path = append_report(&reports_dir, &report)?;
    report.save(&report_path)?;

    println!(
        "policy {} seed {}: val {:.3}, test {:.3} after {} iterations",
        report.policy, report.seed, report.val_accuracy, report.test_accuracy, run.iterations
    );
    println!("checkpoint: {}", ckpt_path.display());
    println!("report: {} (group {})", report_path.display(), group_path.display());
    Ok(())
}

fn load_params(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let bundle = DatasetBundle::load_dir(&args.bundle)?;
    let checkpoint = load_params(&args.checkpoint)?;

    let mut rcatts = Vec::with_capacity(bundle.train_docs.len());
    for doc in &bundle.train_docs {
        let trace = crate::model::forward(&checkpoint.params, &doc.token_ids, None)?;
        rcatts.push(attention::received_attention(&trace));
    }
    let table = attention::decile_kb_table(&bundle.train_docs, &rcatts, args.include_specials)?;
    let spearman = match table.rank_correlation() {
        Ok(r) => Some(r),
        Err(Error::ConstantInput) => None,
        Err(e) => return Err(e),
    };
    let analysis = AttentionAnalysis {
        bundle_hash: bundle.content_hash()?,
        table,
        spearman,
    };
    analysis.save(&args.out)?;
    print!("{}", render_decile_table(&analysis));
    println!("written: {}", args.out.display());
    Ok(())
}

fn cmd_detect(args: DetectArgs) -> Result<()> {
    let bundle = DatasetBundle::load_dir(&args.bundle)?;
    let checkpoint = load_params(&args.checkpoint)?;
    let special = build_special_dataset(&checkpoint.params, &bundle.train_docs, None)?;
    let candidates = harmful_candidates(&special.val, args.tau);
    let set = detect_harmful(&checkpoint.params, &special, &candidates, args.tau)?;
    set.save(&args.out)?;

    println!(
        "tested {} candidate(s) at tau={}: {} harmful, baseline accuracy {:.3}",
        set.candidate_acc.len(),
        set.tau,
        set.ids.len(),
        set.acc0,
    );
    for (id, acc) in &set.candidate_acc {
        let mark = if set.ids.contains(id) { " <- invisible" } else { "" };
        println!("  token {:>4} {:<14} acc {acc:.3}{mark}", id, bundle.vocab.token(*id));
    }
    if let (Some(h0), Some(hj)) = (set.held_acc0, set.held_acc_joint) {
        println!("confirmation half: {h0:.3} -> {hj:.3} with the set hidden");
    }
    println!("written: {}", args.out.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let mut groups: Vec<PathBuf> = Vec::new();
    for path in &args.groups {
        if path.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(path)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
                .collect();
            found.sort();
            groups.extend(found);
        } else {
            groups.push(path.clone());
        }
    }
    if groups.is_empty() {
        return Err(Error::config("no report groups found"));
    }
    for (i, group) in groups.iter().enumerate() {
        let reports = load_report_group(group)?;
        let table = merge_reports(&reports)?;
        if i > 0 {
            println!();
        }
        println!("group {} (bundle {}):", group.display(), &table.bundle_hash[..16]);
        print!("{}", render_comparison(&table));
    }
    Ok(())
}
