//! Brute-force reference implementations that enumerate every walk.
#![allow(dead_code)]

use std::collections::BTreeMap;

use abduction::data::TokenId;
use abduction::taskgen::{self, TaskSpec, WorldConfig};

/// Every symbol path of exactly `steps` transitions from `start`, with its
/// probability (zero-probability paths included).
pub fn walks(spec: &TaskSpec, start: usize, steps: usize) -> Vec<(Vec<usize>, f64)> {
    let mut out = vec![(Vec::new(), 1.0)];
    for _ in 0..steps {
        let mut next = Vec::with_capacity(out.len() * spec.n_symbols());
        for (path, w) in &out {
            let u = path.last().copied().unwrap_or(start);
            for v in 0..spec.n_symbols() {
                let mut p = path.clone();
                p.push(v);
                next.push((p, w * spec.weight(u, v)));
            }
        }
        out = next;
    }
    out
}

fn sym(spec: &TaskSpec, t: TokenId) -> usize {
    spec.symbol(t).expect("symbol token")
}

/// `p(y | x, z)`: probability that a walk of `L` transitions from `last(x)`
/// whose first steps follow `z` visits `y[0]` after `z`, times the emission
/// probability of the rest of `y`.
pub fn outcome_likelihood(spec: &TaskSpec, x: &[TokenId], y: &[TokenId], z: &[TokenId]) -> f64 {
    let start = sym(spec, *x.last().unwrap());
    let target = sym(spec, y[0]);
    let zs: Vec<usize> = z.iter().map(|&t| sym(spec, t)).collect();
    if zs.len() >= spec.horizon() {
        return 0.0;
    }
    let mut hit = 0.0;
    let mut all = 0.0;
    for (path, w) in walks(spec, start, spec.horizon()) {
        if path[..zs.len()] != zs[..] || w == 0.0 {
            continue;
        }
        all += w;
        if path[zs.len()..].contains(&target) {
            hit += w;
        }
    }
    if all == 0.0 {
        return 0.0;
    }
    let mut emission = 1.0;
    for pair in y.windows(2) {
        emission *= spec.weight(sym(spec, pair[0]), sym(spec, pair[1]));
    }
    hit / all * emission
}

/// Exact posterior over bridges: paths of at most `budget` symbols that avoid
/// `y[0]` and then step into it.
pub fn bridge_posterior(spec: &TaskSpec, x: &[TokenId], y: &[TokenId], budget: usize) -> BTreeMap<Vec<TokenId>, f64> {
    let start = sym(spec, *x.last().unwrap());
    let target = sym(spec, y[0]);
    let mut mass = BTreeMap::new();
    for len in 0..=budget {
        for (path, w) in walks(spec, start, len) {
            if path.contains(&target) {
                continue;
            }
            let last = path.last().copied().unwrap_or(start);
            let w = w * spec.weight(last, target);
            if w > 0.0 {
                mass.insert(path.iter().map(|&s| spec.token(s)).collect::<Vec<_>>(), w);
            }
        }
    }
    let total: f64 = mass.values().sum();
    mass.values_mut().for_each(|w| *w /= total);
    mass
}

/// A small world with 3 to 5 symbols and a horizon of 1 to 4.
pub fn small_world(seed: u64) -> TaskSpec {
    let config = WorldConfig {
        n_symbols: 3 + (seed % 3) as usize,
        sparsity: [0.4, 0.6, 0.8, 1.0][(seed / 3 % 4) as usize],
        horizon: 1 + (seed / 2 % 4) as usize,
        context_len: 1 + (seed % 2) as usize,
        outcome_len: 1 + (seed / 5 % 2) as usize,
    };
    taskgen::generate_world(seed, &config).expect("valid world")
}

/// Every sequence of `len` symbol tokens.
pub fn all_sequences(spec: &TaskSpec, len: usize) -> Vec<Vec<TokenId>> {
    walks(spec, 0, len)
        .into_iter()
        .map(|(p, _)| p.into_iter().map(|s| spec.token(s)).collect())
        .collect()
}
