//! Corpus analyses: explanation lengths, bootstrapped n-gram entropy,
//! pairwise bag-of-n-gram distances and Fleiss' kappa.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::Serialize;

use crate::data::{Sequence, TokenId};
use crate::{seed, Error, Result};

pub const DEFAULT_BOOTSTRAP_ITERS: usize = 1000;

/// Mean and population standard deviation of explanation lengths.
pub fn length_stats(explanations: &[Sequence]) -> Result<(f64, f64)> {
    if explanations.is_empty() {
        return Err(Error::invalid("length statistics need at least one explanation"));
    }
    let lens: Vec<f64> = explanations.iter().map(|e| e.len() as f64).collect();
    Ok(mean_std(&lens))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Shannon entropy of a count table divided by the log of its support size;
/// zero when at most one distinct item occurs.
pub fn normalized_entropy<K>(counts: &BTreeMap<K, usize>) -> f64 {
    let distinct = counts.len();
    if distinct <= 1 {
        return 0.0;
    }
    let total: usize = counts.values().sum();
    let total_f = total as f64;
    // H = ln N - (1/N) sum c ln c, exact for all-singleton tables.
    let weighted: f64 = counts.values().map(|&c| c as f64 * (c as f64).ln()).sum();
    (total_f.ln() - weighted / total_f) / (distinct as f64).ln()
}

fn add_ngrams<'a>(seq: &'a [TokenId], n: usize, into: &mut BTreeMap<&'a [TokenId], usize>) {
    if seq.len() < n {
        return;
    }
    for gram in seq.windows(n) {
        *into.entry(gram).or_insert(0) += 1;
    }
}

/// Mean normalized n-gram entropy over bootstrap draws of one explanation per
/// group.
pub fn ngram_entropy(corpus: &[Vec<Sequence>], n: usize, bootstrap_iters: usize, seed: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("n-gram order must be >= 1"));
    }
    if bootstrap_iters == 0 {
        return Err(Error::invalid("need at least one bootstrap iteration"));
    }
    if corpus.iter().any(Vec::is_empty) {
        return Err(Error::invalid("every context-outcome group needs an explanation"));
    }
    let mut total = 0.0;
    for it in 0..bootstrap_iters {
        let mut rng = seed::rng(seed::derive(seed, &[seed::stream::BOOTSTRAP, it as u64]));
        let mut counts = BTreeMap::new();
        for group in corpus {
            let pick = if group.len() == 1 { 0 } else { rng.gen_range(0..group.len()) };
            add_ngrams(&group[pick], n, &mut counts);
        }
        total += normalized_entropy(&counts);
    }
    Ok(total / bootstrap_iters as f64)
}

fn embed(seq: &[TokenId]) -> BTreeMap<Vec<TokenId>, f64> {
    let mut v = BTreeMap::new();
    for n in 1..=2 {
        if seq.len() >= n {
            for g in seq.windows(n) {
                *v.entry(g.to_vec()).or_insert(0.0) += 1.0;
            }
        }
    }
    let norm = v.values().map(|c| c * c).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.values_mut().for_each(|c| *c /= norm);
    }
    v
}

fn distance(a: &BTreeMap<Vec<TokenId>, f64>, b: &BTreeMap<Vec<TokenId>, f64>) -> f64 {
    let mut sq = 0.0;
    for (k, va) in a {
        let d = va - b.get(k).copied().unwrap_or(0.0);
        sq += d * d;
    }
    for (k, vb) in b {
        if !a.contains_key(k) {
            sq += vb * vb;
        }
    }
    sq.sqrt()
}

/// Mean and population std of Euclidean distances between L2-normalized
/// 1- and 2-gram count vectors over all unordered pairs.
pub fn embedding_diversity(explanations: &[Sequence]) -> Result<(f64, f64)> {
    if explanations.len() < 2 {
        return Err(Error::invalid("pairwise diversity needs at least two explanations"));
    }
    let vecs: Vec<_> = explanations.iter().map(|e| embed(e)).collect();
    let mut dists = Vec::with_capacity(vecs.len() * (vecs.len() - 1) / 2);
    for i in 0..vecs.len() {
        for j in i + 1..vecs.len() {
            dists.push(distance(&vecs[i], &vecs[j]));
        }
    }
    Ok(mean_std(&dists))
}

/// Fleiss' kappa for an items x categories table of rater counts. Returns 1
/// under perfect observed agreement.
pub fn fleiss_kappa(ratings: &[Vec<usize>]) -> Result<f64> {
    let first = ratings.first().ok_or_else(|| Error::invalid("no rated items"))?;
    let raters: usize = first.iter().sum();
    let categories = first.len();
    if raters < 2 {
        return Err(Error::invalid("every item needs at least two ratings"));
    }
    for (i, row) in ratings.iter().enumerate() {
        if row.len() != categories || row.iter().sum::<usize>() != raters {
            return Err(Error::invalid(format!(
                "item {i} has a different number of ratings or categories"
            )));
        }
    }
    let n_items = ratings.len() as f64;
    let r = raters as f64;
    let p_bar = ratings
        .iter()
        .map(|row| {
            let agree: usize = row.iter().map(|c| c * c).sum();
            (agree - raters) as f64 / (r * (r - 1.0))
        })
        .sum::<f64>()
        / n_items;
    if p_bar == 1.0 {
        return Ok(1.0);
    }
    let p_e: f64 = (0..categories)
        .map(|j| {
            let share = ratings.iter().map(|row| row[j]).sum::<usize>() as f64 / (n_items * r);
            share * share
        })
        .sum();
    Ok((p_bar - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiversityReport {
    pub mean_len: f64,
    pub std_len: f64,
    /// n -> normalized entropy.
    pub entropy_by_n: BTreeMap<usize, f64>,
    pub mean_pair_dist: Option<f64>,
    pub std_pair_dist: Option<f64>,
    pub kappa: Option<f64>,
}

/// All analyses over explanations grouped per context-outcome pair.
pub fn diversity_report(
    groups: &[Vec<Sequence>],
    bootstrap_iters: usize,
    seed: u64,
    ratings: Option<&[Vec<usize>]>,
) -> Result<DiversityReport> {
    let all: Vec<Sequence> = groups.iter().flatten().cloned().collect();
    let (mean_len, std_len) = length_stats(&all)?;
    let mut entropy_by_n = BTreeMap::new();
    for n in 1..=5 {
        entropy_by_n.insert(n, ngram_entropy(groups, n, bootstrap_iters, seed)?);
    }
    let pair = (all.len() >= 2).then(|| embedding_diversity(&all)).transpose()?;
    Ok(DiversityReport {
        mean_len,
        std_len,
        entropy_by_n,
        mean_pair_dist: pair.map(|p| p.0),
        std_pair_dist: pair.map(|p| p.1),
        kappa: ratings.map(fleiss_kappa).transpose()?,
    })
}

/// `metric,n,value` table.
pub fn render_table(report: &DiversityReport) -> String {
    let mut s = String::from("metric,n,value\n");
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    writeln!(s, "mean_len,,{:.6}", report.mean_len).unwrap();
    writeln!(s, "std_len,,{:.6}", report.std_len).unwrap();
    for (n, h) in &report.entropy_by_n {
        writeln!(s, "entropy,{n},{h:.6}").unwrap();
    }
    writeln!(s, "mean_pair_dist,,{}", opt(report.mean_pair_dist)).unwrap();
    writeln!(s, "std_pair_dist,,{}", opt(report.std_pair_dist)).unwrap();
    writeln!(s, "kappa,,{}", opt(report.kappa)).unwrap();
    s
}

pub fn render_record(report: &DiversityReport) -> String {
    serde_json::to_string(report).expect("report serializes") + "\n"
}
