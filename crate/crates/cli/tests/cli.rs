use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use abduction::data;
use abduction::eval;
use abduction::policy::{self, PolicyParams};
use abduction::seed::{self, stream};
use abduction::taskgen::{self, RatingThresholds, TaskSpec};

fn abduct(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_abduct")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = abduct(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn gen(dir: &Path) -> String {
    ok(&["gen", "--out", dir.to_str().unwrap(), "--dataset.pairs=60"])
}

#[test]
fn gen_is_deterministic_and_histogram_matches_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let printed = gen(a.path());
    assert_eq!(printed, gen(b.path()));
    for f in ["world.txt", "train.jsonl", "dev.jsonl", "test.jsonl", "scales.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let spec = TaskSpec::load(a.path().join("world.txt")).unwrap();
    let th = RatingThresholds::default();
    let mut counts = [0usize; 5];
    for split in ["train", "dev", "test"] {
        let ds = data::load_dataset(a.path().join(format!("{split}.jsonl")), &spec.vocab()).unwrap();
        for ex in ds.iter() {
            assert_eq!(ex.z.is_some(), split == "train");
            let p = taskgen::true_outcome_likelihood(&spec, &ex.x, &ex.y);
            counts[taskgen::likelihood_to_scale(p, &th) as usize - 1] += 1;
        }
    }
    assert_eq!(counts[3] + counts[4], 0);
    for (i, line) in printed.lines().skip(1).enumerate() {
        let count: usize = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(count, counts[i], "scale {}", i + 1);
    }
}

#[test]
fn world_flags_apply() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok(&["gen", "--out", d, "--n-symbols", "7", "--horizon", "3", "--sparsity", "0.4", "--dataset.pairs=12"]);
    let spec = TaskSpec::load(dir.path().join("world.txt")).unwrap();
    assert_eq!((spec.n_symbols(), spec.horizon()), (7, 3));
}

#[test]
fn zero_learning_rate_returns_initial_policy() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    gen(dir.path());
    ok(&["train", "bc", "--out", d, "--train.lr=0", "--train.epochs=2"]);
    let best = PolicyParams::load(dir.path().join("bc/best.ckpt")).unwrap();
    let spec = TaskSpec::load(dir.path().join("world.txt")).unwrap();
    let init = policy::init_params(seed::derive(0, &[stream::INIT]), spec.vocab_size(), 8, 6).unwrap();
    assert_eq!(best, init);
}

#[test]
fn eao_history_and_repeatability() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    gen(dir.path());
    let first = ok(&["train", "eao", "--out", d]);
    let history = fs::read_to_string(dir.path().join("eao/history.csv")).unwrap();
    assert_eq!(first, history);
    let b: Vec<&str> = history.lines().skip(1).map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(b, ["0", "2", "4", "6", "8"]);
    assert_eq!(ok(&["train", "eao", "--out", d]), history);
}

#[test]
fn eval_report_against_expert() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    gen(dir.path());
    ok(&["train", "bc", "--out", d, "--train.epochs=1"]);
    let report = ok(&["eval", "--out", d]);
    let spec = TaskSpec::load(dir.path().join("world.txt")).unwrap();
    let test = data::load_dataset(dir.path().join("test.jsonl"), &spec.vocab()).unwrap();
    assert_eq!(report.lines().next(), Some(eval::REPORT_HEADER));
    let rows: Vec<Vec<&str>> = report.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0][0], "expert");
    assert_eq!((rows[0][1], rows[0][4]), ("0", "0"));
    for row in &rows {
        let sum: usize = row[1..5].iter().map(|v| v.parse::<usize>().unwrap()).sum();
        assert_eq!(sum, test.len());
    }
    let checks = fs::read_to_string(dir.path().join("relevance.csv")).unwrap();
    let expert_row: Vec<&str> = checks.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(expert_row[0], "expert");
    assert_eq!(expert_row[3], test.len().to_string());
    let params = PolicyParams::load(dir.path().join("bc/best.ckpt")).unwrap();
    let mut total = 0.0;
    for ex in test.iter() {
        let z = policy::greedy_decode(&params, &ex.x, &ex.y, 3).unwrap();
        total += taskgen::conditioned_outcome_likelihood(&spec, &ex.x, &ex.y, &z)
            - taskgen::true_outcome_likelihood(&spec, &ex.x, &ex.y);
    }
    let mean: f64 = rows[1][5].parse().unwrap();
    assert!((mean - total / test.len() as f64).abs() < 1e-6);
}

#[test]
fn eval_rejects_vocabulary_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    gen(dir.path());
    let ckpt = dir.path().join("small.ckpt");
    policy::init_params(1, 5, 2, 1).unwrap().save(&ckpt).unwrap();
    let out = abduct(&["eval", "--out", d, &format!("small={}", ckpt.display())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vocabulary"));
}

#[test]
fn missing_inputs_fail_at_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let out = abduct(&["train", "sed", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(abduct(&["train"]).status.code(), Some(1));
    assert_eq!(abduct(&["gen", "--world.colour=3"]).status.code(), Some(1));
    assert_eq!(abduct(&["gen", "--config", "/nonexistent/cfg.toml"]).status.code(), Some(1));
    assert_eq!(abduct(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("out");
    fs::write(&cfg, format!("seed = 3\nout = {:?}\n\n[world]\nn_symbols = 6\n\n[dataset]\npairs = 24\n", out.display().to_string())).unwrap();
    ok(&["gen", "--config", cfg.to_str().unwrap(), "--world.horizon=3"]);
    let spec = TaskSpec::load(out.join("world.txt")).unwrap();
    assert_eq!((spec.n_symbols(), spec.horizon()), (6, 3));
}

#[test]
fn analyze_repeated_explanation_has_zero_entropy() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("same.jsonl");
    let line = r#"{"x":"a","y":"b","z":"c c c c c","source":"human-file"}"#;
    fs::write(&file, format!("{line}\n{line}\n{line}\n")).unwrap();
    let d = dir.path().to_str().unwrap();
    let table = ok(&["analyze", file.to_str().unwrap(), "--out", d]);
    for n in 1..=5 {
        assert!(table.contains(&format!("entropy,{n},0.000000")), "{table}");
    }
    assert_eq!(table, ok(&["analyze", file.to_str().unwrap(), "--out", d]));
    let empty = dir.path().join("none.jsonl");
    fs::write(&empty, r#"{"x":"a","y":"b","source":"human-file"}"#).unwrap();
    assert_eq!(abduct(&["analyze", empty.to_str().unwrap(), "--out", d]).status.code(), Some(2));
}

#[test]
fn analyze_reports_kappa() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("d.jsonl");
    fs::write(&file, "{\"x\":\"a\",\"y\":\"b\",\"z\":\"c\",\"source\":\"expert\"}\n{\"x\":\"a\",\"y\":\"c\",\"z\":\"b a\",\"source\":\"expert\"}\n").unwrap();
    let ratings = dir.path().join("r.csv");
    fs::write(&ratings, "2,1\n1,2\n").unwrap();
    let d = dir.path().to_str().unwrap();
    let table = ok(&["analyze", file.to_str().unwrap(), "--out", d, "--ratings", ratings.to_str().unwrap(), "--analyze.bootstrap_iters=10"]);
    assert!(table.contains("kappa,,-0.333333"), "{table}");
}

#[test]
fn gradcheck_exit_status() {
    let out = ok(&["gradcheck"]);
    assert!(out.contains("bc_max_rel_err=") && out.contains("sed_max_rel_err="));
    assert!(out.contains("status=pass"));
    let bad = abduct(&["gradcheck", "--corrupt-gradient"]);
    assert_eq!(bad.status.code(), Some(2));
}
