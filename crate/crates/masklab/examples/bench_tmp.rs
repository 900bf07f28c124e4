//! Scratch benchmark for pinning acceptance experiment settings. Not part
//! of the shipped examples; deleted before release.

use std::collections::BTreeMap;

use masklab::attention::{decile_kb_table, received_attention};
use masklab::corpus::{generate_synthetic_corpus, DatasetBundle, GenConfig};
use masklab::eval::{accuracy_by_knowledge_class, continual_pretrain, evaluate_cloze, TrainRunConfig};
use masklab::mask::{make_plan, masked_kb_ratio, Policy, PolicyConfig};
use masklab::model::{forward, init_params, AdamConfig, AdamState, ModelConfig, Parameters};
use masklab::seeds;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn train(
    bundle: &DatasetBundle,
    policy: Policy,
    iterations: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Parameters {
    let cfg = ModelConfig::desk(bundle.vocab.len(), seed);
    let mut params = init_params(&cfg).unwrap();
    let mut opt = AdamState::new(&cfg, AdamConfig::default()).unwrap();
    let run = TrainRunConfig {
        iterations,
        policy,
        batch_size,
        lr,
        eval_every: iterations,
        seed,
        ..TrainRunConfig::default()
    };
    continual_pretrain(&mut params, &mut opt, bundle, None, &run).unwrap();
    params
}

fn structure(params: &Parameters, bundle: &DatasetBundle) -> (f64, f64, f64) {
    let rcatts: Vec<Vec<f64>> = bundle
        .train_docs
        .iter()
        .map(|d| received_attention(&forward(params, &d.token_ids, None).unwrap()))
        .collect();
    let rho = decile_kb_table(&bundle.train_docs, &rcatts, false)
        .unwrap()
        .rank_correlation()
        .unwrap();
    let split = accuracy_by_knowledge_class(params, &bundle.train_docs, None).unwrap();
    (rho, split.kb.unwrap(), split.kf.unwrap())
}

fn c8(gen_seed: u64, lr: f64, batch: usize, opener: f64) {
    let t0 = std::time::Instant::now();
    let gc = GenConfig { opener_prob: opener, ..Default::default() };
    let bundle = generate_synthetic_corpus(gen_seed, 100, &gc).unwrap();
    let mut accs: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (name, policy) in [("random", Policy::Random), ("sel-i", Policy::SelI), ("sel-a", Policy::SelA)] {
        for &s in &SEEDS {
            let params = train(&bundle, policy, 100, batch, lr, s);
            let acc = evaluate_cloze(&params, &bundle.val_probes, None).unwrap().accuracy;
            accs.entry(name).or_default().push(acc);
            if policy == Policy::Random {
                let (rho, kb, kf) = structure(&params, &bundle);
                println!("  seed {s}: val {acc:.3} rho {rho:+.3} kb {kb:.3} kf {kf:.3}");
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    print!("C8 gen={gen_seed} lr={lr} b={batch} op={opener}:");
    for (name, v) in &accs {
        print!(" {name}={:.3} [{}]", mean(v), v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("/"));
    }
    println!("  [{}s]", t0.elapsed().as_secs());
}

fn c9(gen_seed: u64, n_facts: usize, iters: usize, lr: f64, batch: usize, opener: f64) {
    let t0 = std::time::Instant::now();
    let gc = GenConfig { opener_prob: opener, ..Default::default() };
    let bundle = generate_synthetic_corpus(gen_seed, n_facts, &gc).unwrap();
    let mut negs = 0;
    let mut kbs = Vec::new();
    let mut kfs = Vec::new();
    for &s in &SEEDS {
        let params = train(&bundle, Policy::Random, iters, batch, lr, s);
        let (rho, kb, kf) = structure(&params, &bundle);
        println!("  seed {s}: rho {rho:+.3} kb {kb:.3} kf {kf:.3}");
        if rho < 0.0 {
            negs += 1;
        }
        kbs.push(kb);
        kfs.push(kf);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "C9 gen={gen_seed} facts={n_facts} it={iters} lr={lr} b={batch} op={opener}: rho<0 in {negs}/5, kb {:.3} kf {:.3}  [{}s]",
        mean(&kbs),
        mean(&kfs),
        t0.elapsed().as_secs()
    );
}

fn c7(gen_seed: u64, lr: f64, batch: usize, opener: f64) {
    let t0 = std::time::Instant::now();
    let gc = GenConfig { opener_prob: opener, ..Default::default() };
    let bundle = generate_synthetic_corpus(gen_seed, 500, &gc).unwrap();
    let mut sums = [0.0f64; 3];
    for &s in &SEEDS {
        let params = train(&bundle, Policy::Random, 50, batch, lr, s);
        let pc = PolicyConfig::default();
        let mut line = format!("  gen={gen_seed} lr={lr} b={batch} seed={s}:");
        for (k, (name, policy)) in
            [("random", Policy::Random), ("sel-i", Policy::SelI), ("sel-a", Policy::SelA)].into_iter().enumerate()
        {
            let mut rng = seeds::rng_indexed(s, "bench-plan", k as u64);
            let plans: Vec<_> = bundle
                .train_docs
                .iter()
                .map(|d| make_plan(&params, d, None, policy, &pc, &mut rng).unwrap())
                .collect();
            let r = masked_kb_ratio(&plans, &bundle.train_docs).unwrap();
            sums[k] += r;
            line.push_str(&format!(" {name}={r:.4}"));
        }
        println!("{line}");
    }
    let n = SEEDS.len() as f64;
    println!(
        "C7 gen={gen_seed} lr={lr} b={batch} op={opener}: random={:.4} sel-i={:.4} ({:.2}x) sel-a={:.4} ({:.2}x)  [{}s]",
        sums[0] / n,
        sums[1] / n,
        sums[1] / sums[0],
        sums[2] / n,
        sums[2] / sums[0],
        t0.elapsed().as_secs()
    );
}

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_default();
    match mode.as_str() {
        "c8a" => c8(7, 3e-3, 8, 1.0),
        "c8b" => c8(7, 1e-2, 16, 1.0),
        "c8c" => c8(7, 5e-3, 8, 1.0),
        "c9" => c9(7, 500, 50, 1e-2, 16, 1.0),
        "c9b" => c9(7, 100, 100, 3e-3, 8, 1.0),
        "c7" => c7(7, 1e-2, 16, 1.0),
        other => eprintln!("unknown mode {other:?}"),
    }
}
