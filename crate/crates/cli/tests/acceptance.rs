//! Acceptance suite: one PASS/FAIL line per criterion.

#[path = "../../core/tests/common/mod.rs"]
mod oracle;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use abduction::analysis;
use abduction::data::{Dataset, Example, Sequence, Source, TokenId};
use abduction::eval::{self, JudgeParams, SystemOutputs};
use abduction::imitation::{self, AggregatedExample, TrainerConfig};
use abduction::policy::{self, PolicyParams};
use abduction::seed::{self, stream};
use abduction::taskgen::{self, RatingThresholds, TaskSpec, WorldConfig};
use rand::Rng;

type Check = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn abduct(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_abduct")).args(args).output().expect("run abduct")
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> std::result::Result<(), String> {
    if elapsed < limit {
        Ok(())
    } else {
        Err(format!("{what} took {elapsed:.1?}, limit {limit:?}"))
    }
}

fn gradient_fidelity() -> Check {
    let start = Instant::now();
    let out = abduct(&["gradcheck"]);
    let line = String::from_utf8_lossy(&out.stdout).trim().to_string();
    ensure!(out.status.success(), "gradcheck exited with {:?}: {line}", out.status.code());
    let field = |name: &str| -> Option<f64> {
        line.split_whitespace()
            .find_map(|kv| kv.strip_prefix(name)?.strip_prefix('=')?.parse().ok())
    };
    let (bc, sed, n) = (field("bc_max_rel_err"), field("sed_max_rel_err"), field("params"));
    let (Some(bc), Some(sed), Some(n)) = (bc, sed, n) else {
        return Err(format!("unparseable report `{line}`"));
    };
    ensure!(bc <= 1e-4 && sed <= 1e-4, "errors bc {bc:e}, sed {sed:e}");
    ensure!(n <= 2000.0, "policy has {n} parameters");
    within(start.elapsed(), Duration::from_secs(30), "gradcheck")?;
    Ok(format!("bc {bc:.2e}, sed {sed:.2e} on {n} parameters in {:.1?}", start.elapsed()))
}

fn random_batch(rng: &mut impl Rng, vocab: usize) -> (Vec<Example>, Vec<AggregatedExample>) {
    let sym = |rng: &mut dyn rand::RngCore, len: usize| -> Vec<TokenId> {
        (0..len).map(|_| rng.gen_range(3..vocab as u32)).collect()
    };
    let n = rng.gen_range(1..=6);
    let mut examples = Vec::new();
    let mut aggregated = Vec::new();
    for _ in 0..n {
        let (lx, ly, lz, lt) = (rng.gen_range(1..4), rng.gen_range(1..3), rng.gen_range(0..5), rng.gen_range(0..5));
        let (x, y, z, t) = (sym(rng, lx), sym(rng, ly), sym(rng, lz), sym(rng, lt));
        examples.push(
            Example::new(x.clone().into(), y.clone().into())
                .unwrap()
                .with_explanation(z.clone().into(), Source::Expert),
        );
        aggregated.push(AggregatedExample {
            x: x.into(),
            y: y.into(),
            z: z.into(),
            z_tilde: Some(t.into()),
            prefix_len: 0,
        });
    }
    (examples, aggregated)
}

fn reduction_identities() -> Check {
    let mut rng = seed::rng(2024);
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let vocab = rng.gen_range(5..12);
        let (d, w) = (rng.gen_range(2..6), rng.gen_range(1..5));
        let p = policy::init_params(seed::derive(i, &[1]), vocab, d, w).unwrap();
        let p0 = policy::init_params(seed::derive(i, &[2]), vocab, d, w).unwrap();
        let (batch, agg) = random_batch(&mut rng, vocab);
        let bc = imitation::bc_loss(&p, &batch).unwrap();
        let sed = imitation::sed_loss(&p, &p0, &agg, 0.0, 0.0).unwrap();
        let rel = (sed - bc).abs() / bc.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        ensure!(rel <= 1e-12, "draw {i}: sed {sed} vs bc {bc}");
        for ex in &agg {
            let kl = imitation::kl_to_initial(&p0, &p0, &ex.x, &ex.y, &ex.z).unwrap();
            ensure!(kl == 0.0, "draw {i}: KL(p0, p0) = {kl}");
        }
    }
    let mut min_kl = f64::INFINITY;
    for i in 0..1000u64 {
        let vocab = rng.gen_range(4..10);
        let (d, w) = (rng.gen_range(2..5), rng.gen_range(1..4));
        let p0 = policy::init_params(seed::derive(i, &[3]), vocab, d, w).unwrap();
        let p = policy::init_params(seed::derive(i, &[4]), vocab, d, w).unwrap();
        let (_, agg) = random_batch(&mut rng, vocab);
        let ex = &agg[0];
        let kl = imitation::kl_to_initial(&p0, &p, &ex.x, &ex.y, &ex.z).unwrap();
        ensure!(kl >= 0.0, "pair {i}: KL = {kl}");
        min_kl = min_kl.min(kl);
    }
    Ok(format!("max sed/bc rel gap {worst:.1e}; KL(p0,p0) = 0 exactly; min KL over 1000 pairs {min_kl:.2e}"))
}

fn benchmark_world() -> TaskSpec {
    let config = WorldConfig {
        n_symbols: 8,
        sparsity: 0.3,
        horizon: 4,
        context_len: 2,
        outcome_len: 1,
    };
    taskgen::generate_world(0, &config).unwrap()
}

fn algorithm_mechanics() -> Check {
    let spec = benchmark_world();
    let n = 40;
    let pairs = taskgen::uncommon_pairs(&spec, n, 0, &RatingThresholds::default()).unwrap();
    let (train, _) = taskgen::with_expert_explanations(&spec, &pairs, 0, 8);
    let init = policy::init_params(seed::derive(0, &[stream::INIT]), spec.vocab_size(), 8, 6).unwrap();
    let config = TrainerConfig {
        lr: 1e-2,
        epochs: 5,
        block_size: 2,
        initial_prefix: 0,
        max_len: 8,
        ..TrainerConfig::default()
    };
    let none = |_: &PolicyParams| Ok(0.0);
    let out = imitation::train_eao(&config, &init, &train, &spec, &none).map_err(|e| e.to_string())?;
    let b: Vec<usize> = out.history.iter().filter_map(|r| r.prefix_len).collect();
    ensure!(b == [0, 2, 4, 6, 8], "prefix lengths {b:?}");
    let sizes: Vec<usize> = out.history.iter().map(|r| r.aggregated).collect();
    ensure!(sizes == [n, 2 * n, 3 * n, 4 * n, 5 * n], "aggregate sizes {sizes:?}");
    ensure!(out.aggregated.len() == 5 * n, "final aggregate {}", out.aggregated.len());
    let mut nonempty = 0;
    for (i, entry) in out.aggregated.iter().enumerate() {
        let tilde = entry.z_tilde.as_ref().ok_or("missing learner sample")?;
        let keep = entry.prefix_len.min(tilde.len());
        ensure!(entry.z.len() >= keep && entry.z[..keep] == tilde[..keep], "entry {i} does not start with its learner prefix");
        nonempty += usize::from(keep > 0);
    }
    Ok(format!("b = {b:?}, |D| = {sizes:?}, {nonempty} entries carry a non-empty learner prefix"))
}

fn oracle_equivalence() -> Check {
    let start = Instant::now();
    let mut compared = 0usize;
    let mut worst = 0.0f64;
    for w in 0..50 {
        let spec = oracle::small_world(w);
        let prefixes: Vec<Vec<TokenId>> = (0..=spec.horizon()).flat_map(|l| oracle::all_sequences(&spec, l)).collect();
        for s in 0..spec.n_symbols() {
            let x = vec![spec.token(s)];
            for y in oracle::all_sequences(&spec, spec.outcome_len()) {
                let got = taskgen::true_outcome_likelihood(&spec, &x, &y);
                let want = oracle::outcome_likelihood(&spec, &x, &y, &[]);
                worst = worst.max((got - want).abs());
                ensure!((got - want).abs() <= 1e-9, "world {w}: p(y|x) {got} vs {want}");
                for z in &prefixes {
                    let got = taskgen::conditioned_outcome_likelihood(&spec, &x, &y, z);
                    let want = oracle::outcome_likelihood(&spec, &x, &y, z);
                    worst = worst.max((got - want).abs());
                    ensure!((got - want).abs() <= 1e-9, "world {w}: p(y|x,z) {got} vs {want}");
                    compared += 1;
                }
            }
        }
    }
    let mut worst_tv = 0.0f64;
    let mut tv_worlds = 0;
    for w in 0..50u64 {
        let spec = oracle::small_world(w);
        let x = vec![spec.token(0)];
        let y = vec![spec.token(spec.n_symbols() - 1)];
        let post = oracle::bridge_posterior(&spec, &x, &y, spec.horizon() - 1);
        if post.is_empty() {
            continue;
        }
        let draws = 100_000u64;
        let mut counts: BTreeMap<Vec<TokenId>, u64> = BTreeMap::new();
        for i in 0..draws {
            let s = taskgen::expert_sample(&spec, &x, &y, &[], seed::derive(w, &[stream::EXPERT, i]), usize::MAX);
            *counts.entry(s.continuation.into_inner()).or_insert(0) += 1;
        }
        let mut tv = 0.0;
        for (z, p) in &post {
            tv += (p - *counts.get(z).unwrap_or(&0) as f64 / draws as f64).abs();
        }
        for (z, c) in &counts {
            if !post.contains_key(z) {
                tv += *c as f64 / draws as f64;
            }
        }
        tv /= 2.0;
        worst_tv = worst_tv.max(tv);
        tv_worlds += 1;
        ensure!(tv <= 0.01, "world {w}: total variation {tv}");
    }
    within(start.elapsed(), Duration::from_secs(120), "oracle comparison")?;
    Ok(format!(
        "{compared} likelihoods, max abs err {worst:.1e}; max TV {worst_tv:.4} over {tv_worlds} worlds x 100k draws; {:.1?}",
        start.elapsed()
    ))
}

fn benchmark() -> Check {
    let start = Instant::now();
    let spec = benchmark_world();
    let th = RatingThresholds::default();
    let max_len = spec.horizon() - 1;
    let all = taskgen::uncommon_pairs(&spec, 300, 0, &th).map_err(|e| e.to_string())?;
    let (train, dev, test) = abduction::data::split_dataset(&all, (4.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0), 0).unwrap();
    ensure!((train.len(), dev.len(), test.len()) == (200, 50, 50), "split sizes");
    let (train, _) = taskgen::with_expert_explanations(&spec, &train, 0, max_len);
    let expert = eval::expert_decodes(&spec, &test, max_len);
    let mut lose = [0.0f64; 3];
    for s in 0..5u64 {
        let init = policy::init_params(seed::derive(s, &[stream::INIT]), spec.vocab_size(), 8, 6).unwrap();
        let config = TrainerConfig {
            lr: 1e-2,
            batch_size: 8,
            epochs: 5,
            block_size: 2,
            max_len,
            seed: s,
            ..TrainerConfig::default()
        };
        let metric = |p: &PolicyParams| eval::dev_metric(&spec, p, &dev, max_len);
        let run = |r: abduction::Result<imitation::TrainOutcome>| r.map(|o| o.best).map_err(|e| e.to_string());
        let bc = run(imitation::train_bc(&config, &init, &train, &metric))?;
        let sed = run(imitation::train_sed(&config, &init, &train, &metric))?;
        let eao = run(imitation::train_eao(&config, &init, &train, &spec, &metric))?;
        let mut systems = vec![SystemOutputs { name: "expert".into(), outputs: expert.clone() }];
        for (name, p) in [("bc", &bc), ("sed", &sed), ("eao", &eao)] {
            systems.push(SystemOutputs {
                name: name.into(),
                outputs: eval::decode_all(p, &test, max_len).unwrap(),
            });
        }
        let table = eval::win_rate_table(&test, &systems, "expert", &spec, &JudgeParams::default()).unwrap();
        for (i, (_, tally)) in table[1..].iter().enumerate() {
            lose[i] += tally.lose_rate() / 5.0;
        }
    }
    let [bc, sed, eao] = lose;
    let summary = format!("mean lose-rate BC {bc:.3}, SED {sed:.3}, EaO {eao:.3} in {:.1?}", start.elapsed());
    ensure!(eao <= bc && sed <= bc, "{summary}");
    within(start.elapsed(), Duration::from_secs(300), "benchmark")?;
    Ok(summary)
}

fn curation_filters() -> Check {
    let spec = benchmark_world();
    let th = RatingThresholds::default();
    let mut examples = Vec::new();
    for i in 0..400u64 {
        let co = taskgen::sample_context_outcome(&spec, i, i % 4 == 0, &th).map_err(|e| e.to_string())?;
        examples.push(Example::new(co.x, co.y).unwrap());
    }
    let pool = Dataset::new(examples);
    let kept = taskgen::filter_common(&pool, &spec, &th);
    let mut by_scale = [0usize; 5];
    for ex in pool.iter() {
        by_scale[taskgen::likelihood_to_scale(oracle::outcome_likelihood(&spec, &ex.x, &ex.y, &[]), &th) as usize - 1] += 1;
    }
    for ex in kept.iter() {
        let scale = taskgen::likelihood_to_scale(oracle::outcome_likelihood(&spec, &ex.x, &ex.y, &[]), &th);
        ensure!(scale <= 3, "kept an example rated {scale}");
    }
    ensure!(kept.len() == by_scale[..3].iter().sum::<usize>(), "filter dropped a low-rated example");

    let mut rng = seed::rng(99);
    let mut votes = Vec::new();
    for _ in 0..pool.len() {
        let n = rng.gen_range(1..=6);
        votes.push((0..n).map(|_| rng.gen_bool(0.5)).collect::<Vec<bool>>());
    }
    votes[0] = vec![true, false];
    votes[1] = vec![true, true, false];
    let kept_votes = taskgen::filter_impossible(&pool, &votes).map_err(|e| e.to_string())?;
    let keep: Vec<usize> = (0..pool.len())
        .filter(|&i| votes[i].iter().filter(|&&b| b).count() * 2 <= votes[i].len())
        .collect();
    ensure!(keep.first() == Some(&0), "half-impossible example dropped");
    ensure!(!keep.contains(&1), "majority-impossible example kept");
    let expected: Vec<&Example> = keep.iter().map(|&i| &pool.examples[i]).collect();
    ensure!(kept_votes.examples.iter().collect::<Vec<_>>() == expected, "impossible filter mismatch");

    let outcomes = oracle::all_sequences(&spec, spec.outcome_len());
    for i in 0..1000 {
        let k = rng.gen_range(1..=8);
        let candidates: Vec<Sequence> = (0..k).map(|_| Sequence(outcomes[rng.gen_range(0..outcomes.len())].clone())).collect();
        let x = vec![spec.token(rng.gen_range(0..spec.n_symbols()))];
        let got = taskgen::select_least_likely(&candidates, &x, &spec).map_err(|e| e.to_string())?;
        let mut best = 0;
        for (j, c) in candidates.iter().enumerate() {
            if oracle::outcome_likelihood(&spec, &x, c, &[]) < oracle::outcome_likelihood(&spec, &x, &candidates[best], &[]) {
                best = j;
            }
        }
        let (pg, pb) = (
            oracle::outcome_likelihood(&spec, &x, &got, &[]),
            oracle::outcome_likelihood(&spec, &x, &candidates[best], &[]),
        );
        ensure!((pg - pb).abs() <= 1e-12, "set {i}: chose p={pg}, argmin p={pb}");
    }
    Ok(format!(
        "{} of {} kept (scales {:?}); impossible-vote filter kept {}; 1000 argmin sets agree",
        kept.len(),
        pool.len(),
        by_scale,
        kept_votes.len()
    ))
}

fn analysis_correctness() -> Check {
    let kappa = analysis::fleiss_kappa(&[vec![2, 1], vec![1, 2]]).map_err(|e| e.to_string())?;
    ensure!((kappa + 1.0 / 3.0).abs() <= 1e-9, "kappa {kappa}");
    let seqs = |v: &[&[TokenId]]| v.iter().map(|s| Sequence(s.to_vec())).collect::<Vec<_>>();
    let distinct: Vec<Vec<Sequence>> = vec![seqs(&[&[3, 4]]), seqs(&[&[5, 6]]), seqs(&[&[7]])];
    let h1 = analysis::ngram_entropy(&distinct, 1, 20, 5).map_err(|e| e.to_string())?;
    ensure!(h1 == 1.0, "all-distinct entropy {h1}");
    let single: Vec<Vec<Sequence>> = vec![seqs(&[&[3, 3, 3], &[3, 3]]); 4];
    let h0 = analysis::ngram_entropy(&single, 2, 20, 5).map_err(|e| e.to_string())?;
    ensure!(h0 == 0.0, "single-n-gram entropy {h0}");
    let corpus: Vec<Vec<Sequence>> = (0..30u32)
        .map(|i| seqs(&[&[3 + i % 5, 4 + i % 3, 3], &[5, 3 + i % 7], &[6 + i % 2]]))
        .collect();
    let iters = analysis::DEFAULT_BOOTSTRAP_ITERS;
    ensure!(iters == 1000, "default bootstrap iterations {iters}");
    let a = analysis::ngram_entropy(&corpus, 2, iters, 17).map_err(|e| e.to_string())?;
    let b = analysis::ngram_entropy(&corpus, 2, iters, 17).map_err(|e| e.to_string())?;
    ensure!(a.to_bits() == b.to_bits(), "bootstrap not reproducible: {a} vs {b}");
    Ok(format!("kappa {kappa:.9}, entropies 1.0 / 0.0, bootstrap {a:.6} reproduced bit-for-bit, {iters} iterations"))
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn end_to_end_determinism() -> Check {
    let base = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for run in ["a", "b"] {
        let dir = base.path().join(run);
        let d = dir.to_str().unwrap();
        let steps: [&[&str]; 5] = [
            &["gen", "--out", d, "--seed", "11"],
            &["train", "bc", "--out", d, "--seed", "11"],
            &["train", "sed", "--out", d, "--seed", "11"],
            &["train", "eao", "--out", d, "--seed", "11"],
            &["eval", "--out", d, "--seed", "11"],
        ];
        for args in steps {
            let out = abduct(args);
            ensure!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        }
        runs.push(files_under(&dir));
    }
    let names: Vec<_> = runs[0].keys().collect();
    ensure!(runs[0].keys().eq(runs[1].keys()), "runs produced different file sets");
    for (path, bytes) in &runs[0] {
        ensure!(runs[1][path] == *bytes, "{} differs between runs", path.display());
    }
    for needed in ["world.txt", "train.jsonl", "bc/history.csv", "eao/best.ckpt", "report.csv"] {
        ensure!(runs[0].contains_key(Path::new(needed)), "missing {needed}");
    }
    Ok(format!("{} files byte-identical across two runs", names.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("gradient fidelity", gradient_fidelity),
        ("reduction identities", reduction_identities),
        ("algorithm mechanics", algorithm_mechanics),
        ("oracle equivalence", oracle_equivalence),
        ("imitation method ranking", benchmark),
        ("curation filters", curation_filters),
        ("analysis correctness", analysis_correctness),
        ("end-to-end determinism", end_to_end_determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                Err(format!("panicked: {msg}"))
            });
        match result {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
