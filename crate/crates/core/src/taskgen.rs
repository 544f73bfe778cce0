//! The synthetic uncommon-outcome world.
//!
//! Symbols are nodes of a weighted transition graph. A context is a walk of
//! `context_len` symbols, an outcome a walk of `outcome_len` symbols, and an
//! explanation a path of intermediate symbols bridging the end of the context
//! to the start of the outcome. With horizon `L`:
//!
//! * `p(y|x)` is the probability that a walk leaving `last(x)` first hits
//!   `first(y)` within `L` transitions, times the probability of then
//!   emitting the rest of `y`.
//! * `p(y|x,z)` is the same probability conditioned on the walk's first `|z|`
//!   symbols being `z`; the remaining budget is `L - |z|` transitions.
//! * The expert is the exact posterior over bridges: a bridge `z` avoids
//!   `first(y)`, has at most `L - 1` symbols, and is weighted by the product
//!   of its edge weights including the final edge into `first(y)`.
//!
//! Sequences carry vocabulary token ids; symbol `i` is token `FIRST_SYMBOL + i`.
//! Any reserved token inside a path makes that path impossible.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Example, Sequence, Source, TokenId, Vocab, FIRST_SYMBOL};
use crate::{seed, Error, Result};

const MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    n_symbols: usize,
    /// Row-major `n_symbols x n_symbols` transition matrix.
    weights: Vec<f64>,
    horizon: usize,
    outcome_len: usize,
    context_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldConfig {
    pub n_symbols: usize,
    /// Probability that any given edge exists before the repair pass.
    pub sparsity: f64,
    pub horizon: usize,
    pub context_len: usize,
    pub outcome_len: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_symbols: 6,
            sparsity: 0.5,
            horizon: 4,
            context_len: 2,
            outcome_len: 1,
        }
    }
}

impl TaskSpec {
    pub fn new(
        n_symbols: usize,
        weights: Vec<f64>,
        horizon: usize,
        context_len: usize,
        outcome_len: usize,
    ) -> Result<Self> {
        if n_symbols == 0 || weights.len() != n_symbols * n_symbols {
            return Err(Error::invalid("weight matrix must be n_symbols x n_symbols"));
        }
        if horizon == 0 || context_len == 0 || outcome_len == 0 {
            return Err(Error::invalid("horizon, context_len and outcome_len must be >= 1"));
        }
        for (u, row) in weights.chunks(n_symbols).enumerate() {
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::invalid(format!("row {u} has a negative or non-finite weight")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("row {u} sums to {s}, not 1")));
            }
        }
        if n_symbols > 1 {
            for v in 0..n_symbols {
                if !(0..n_symbols).any(|u| u != v && weights[u * n_symbols + v] > 0.0) {
                    return Err(Error::invalid(format!(
                        "symbol {v} is not reachable from any other symbol"
                    )));
                }
            }
        }
        Ok(Self {
            n_symbols,
            weights,
            horizon,
            outcome_len,
            context_len,
        })
    }

    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn outcome_len(&self) -> usize {
        self.outcome_len
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn weight(&self, u: usize, v: usize) -> f64 {
        self.weights[u * self.n_symbols + v]
    }

    pub fn row(&self, u: usize) -> &[f64] {
        &self.weights[u * self.n_symbols..(u + 1) * self.n_symbols]
    }

    /// Vocabulary `<bos> <eos> <sep> s0 s1 ...`.
    pub fn vocab(&self) -> Vocab {
        let names: Vec<String> = (0..self.n_symbols).map(|i| format!("s{i}")).collect();
        Vocab::new(&names).expect("generated names are distinct")
    }

    pub fn vocab_size(&self) -> usize {
        self.n_symbols + FIRST_SYMBOL as usize
    }

    /// Symbol index of a token, or `None` for reserved or out-of-range tokens.
    pub fn symbol(&self, token: TokenId) -> Option<usize> {
        let s = token.checked_sub(FIRST_SYMBOL)? as usize;
        (s < self.n_symbols).then_some(s)
    }

    pub fn token(&self, symbol: usize) -> TokenId {
        debug_assert!(symbol < self.n_symbols);
        FIRST_SYMBOL + symbol as TokenId
    }

    fn symbols_of(&self, seq: &[TokenId]) -> Option<Vec<usize>> {
        seq.iter().map(|&t| self.symbol(t)).collect()
    }

    /// Product of edge weights along `start -> path[0] -> path[1] ...`.
    fn path_weight(&self, start: usize, path: &[usize]) -> f64 {
        let mut w = 1.0;
        let mut u = start;
        for &v in path {
            w *= self.weight(u, v);
            u = v;
        }
        w
    }

    /// `table[r][u]`: probability that a walk from `u` hits `target` at some
    /// step `1..=r`, counting only the first hit.
    fn hit_table(&self, target: usize, max_steps: usize) -> Vec<Vec<f64>> {
        let n = self.n_symbols;
        let mut table = vec![vec![0.0; n]; max_steps + 1];
        for r in 1..=max_steps {
            for u in 0..n {
                let mut h = self.weight(u, target);
                for v in (0..n).filter(|&v| v != target) {
                    h += self.weight(u, v) * table[r - 1][v];
                }
                table[r][u] = h;
            }
        }
        table
    }

    fn hit_probability(&self, from: usize, target: usize, steps: usize) -> f64 {
        self.hit_table(target, steps)[steps][from]
    }

    /// Probability of emitting `y[1..]` once the walk is at `y[0]`.
    fn emission(&self, y: &[usize]) -> f64 {
        self.path_weight(y[0], &y[1..])
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# abduction world").unwrap();
        writeln!(s, "n_symbols {}", self.n_symbols).unwrap();
        writeln!(s, "L {}", self.horizon).unwrap();
        writeln!(s, "outcome_len {}", self.outcome_len).unwrap();
        writeln!(s, "context_len {}", self.context_len).unwrap();
        writeln!(s, "weights").unwrap();
        for row in self.weights.chunks(self.n_symbols) {
            let cells: Vec<String> = row.iter().map(|w| format!("{w:.16e}")).collect();
            writeln!(s, "{}", cells.join(" ")).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut n = None;
        let mut horizon = None;
        let mut outcome_len = None;
        let mut context_len = None;
        let mut weights = Vec::new();
        let mut in_weights = false;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                line: i + 1,
                message,
            };
            if in_weights {
                for cell in line.split_whitespace() {
                    weights.push(
                        cell.parse::<f64>()
                            .map_err(|e| err(format!("bad weight `{cell}`: {e}")))?,
                    );
                }
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            if key == "weights" {
                in_weights = true;
                continue;
            }
            let value: usize = parts
                .next()
                .ok_or_else(|| err(format!("missing value for `{key}`")))?
                .parse()
                .map_err(|e| err(format!("bad value for `{key}`: {e}")))?;
            match key {
                "n_symbols" => n = Some(value),
                "L" => horizon = Some(value),
                "outcome_len" => outcome_len = Some(value),
                "context_len" => context_len = Some(value),
                _ => return Err(err(format!("unknown key `{key}`"))),
            }
        }
        let missing = |k: &str| Error::invalid(format!("world file is missing `{k}`"));
        TaskSpec::new(
            n.ok_or_else(|| missing("n_symbols"))?,
            weights,
            horizon.ok_or_else(|| missing("L"))?,
            context_len.ok_or_else(|| missing("context_len"))?,
            outcome_len.ok_or_else(|| missing("outcome_len"))?,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Builds a random world. Rows without any edge are redrawn, and a symbol
/// with no incoming edge from another symbol receives one from its
/// predecessor, so generation never fails for valid arguments.
pub fn generate_world(seed: u64, config: &WorldConfig) -> Result<TaskSpec> {
    let n = config.n_symbols;
    if n < 3 {
        return Err(Error::invalid("n_symbols must be >= 3"));
    }
    if !(config.sparsity > 0.0 && config.sparsity <= 1.0) {
        return Err(Error::invalid("sparsity must be in (0, 1]"));
    }
    let mut rng = seed::rng(seed::derive(seed, &[seed::stream::WORLD]));
    let mut w = vec![0.0; n * n];
    for u in 0..n {
        loop {
            for v in 0..n {
                w[u * n + v] = if rng.gen::<f64>() < config.sparsity {
                    rng.gen_range(0.05..1.0)
                } else {
                    0.0
                };
            }
            if w[u * n..(u + 1) * n].iter().any(|&x| x > 0.0) {
                break;
            }
        }
    }
    for v in 0..n {
        if !(0..n).any(|u| u != v && w[u * n + v] > 0.0) {
            let u = (v + n - 1) % n;
            w[u * n + v] = rng.gen_range(0.05..1.0);
        }
    }
    for row in w.chunks_mut(n) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
    }
    TaskSpec::new(n, w, config.horizon, config.context_len, config.outcome_len)
}

/// Thresholds mapping a probability onto the 1..5 likelihood scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingThresholds {
    pub t5: f64,
    pub t4: f64,
    pub t3: f64,
    pub t2: f64,
}

impl RatingThresholds {
    pub fn new(t5: f64, t4: f64, t3: f64, t2: f64) -> Result<Self> {
        if !(1.0 > t5 && t5 > t4 && t4 > t3 && t3 > t2 && t2 > 0.0) {
            return Err(Error::invalid(
                "rating thresholds must satisfy 1 > t5 > t4 > t3 > t2 > 0",
            ));
        }
        Ok(Self { t5, t4, t3, t2 })
    }
}

impl Default for RatingThresholds {
    fn default() -> Self {
        Self {
            t5: 0.6,
            t4: 0.3,
            t3: 0.1,
            t2: 0.02,
        }
    }
}

pub fn likelihood_to_scale(p: f64, th: &RatingThresholds) -> u8 {
    if p >= th.t5 {
        5
    } else if p >= th.t4 {
        4
    } else if p >= th.t3 {
        3
    } else if p >= th.t2 {
        2
    } else {
        1
    }
}

/// Exact `p(y|x)`.
pub fn true_outcome_likelihood(spec: &TaskSpec, x: &[TokenId], y: &[TokenId]) -> f64 {
    conditioned_outcome_likelihood(spec, x, y, &[])
}

/// Exact `p(y|x,z)`: the outcome probability given that the walk from
/// `last(x)` starts with `z`. Zero if `z` uses a missing edge or exhausts the
/// horizon.
pub fn conditioned_outcome_likelihood(
    spec: &TaskSpec,
    x: &[TokenId],
    y: &[TokenId],
    z: &[TokenId],
) -> f64 {
    let (Some(&last_x), Some(ys), Some(zs)) = (x.last(), spec.symbols_of(y), spec.symbols_of(z))
    else {
        return 0.0;
    };
    let Some(start) = spec.symbol(last_x) else {
        return 0.0;
    };
    if ys.is_empty() || zs.len() >= spec.horizon || spec.path_weight(start, &zs) == 0.0 {
        return 0.0;
    }
    let from = zs.last().copied().unwrap_or(start);
    spec.hit_probability(from, ys[0], spec.horizon - zs.len()) * spec.emission(&ys)
}

/// `p(y|z)` with no context: the walk starts from a uniformly drawn symbol.
fn contextless_outcome_likelihood(spec: &TaskSpec, y: &[usize], z: &[usize]) -> f64 {
    let n = spec.n_symbols;
    if z.len() >= spec.horizon {
        return 0.0;
    }
    let emission = spec.emission(y);
    match z.split_first() {
        None => {
            let table = spec.hit_table(y[0], spec.horizon);
            table[spec.horizon].iter().sum::<f64>() / n as f64 * emission
        }
        Some((&first, rest)) => {
            // Conditioning on the prefix leaves only the start's edge into
            // z[0] uncertain, and it cancels unless no symbol can reach z[0].
            let into_first: f64 = (0..n).map(|s| spec.weight(s, first)).sum();
            if into_first == 0.0 || spec.path_weight(first, rest) == 0.0 {
                return 0.0;
            }
            let from = *z.last().unwrap();
            spec.hit_probability(from, y[0], spec.horizon - z.len()) * emission
        }
    }
}

/// True iff `p(y|x,z) - p(y|z) > epsilon`.
pub fn relevance_check(
    spec: &TaskSpec,
    x: &[TokenId],
    y: &[TokenId],
    z: &[TokenId],
    epsilon: f64,
) -> bool {
    relevance_gap(spec, x, y, z).is_some_and(|gap| gap > epsilon)
}

/// `p(y|x,z) - p(y|z)`, or `None` when `y` or `z` hold non-symbol tokens.
pub fn relevance_gap(spec: &TaskSpec, x: &[TokenId], y: &[TokenId], z: &[TokenId]) -> Option<f64> {
    let ys = spec.symbols_of(y).filter(|v| !v.is_empty())?;
    let zs = spec.symbols_of(z)?;
    let with_context = conditioned_outcome_likelihood(spec, x, y, z);
    Some(with_context - contextless_outcome_likelihood(spec, &ys, &zs))
}

/// Log posterior probability of bridge `z` under the expert, or
/// `f64::NEG_INFINITY` when `z` is not a possible bridge.
pub fn expert_logprob(spec: &TaskSpec, x: &[TokenId], y: &[TokenId], z: &[TokenId]) -> f64 {
    let bridge = || -> Option<f64> {
        let start = spec.symbol(*x.last()?)?;
        let target = spec.symbol(*y.first()?)?;
        let zs = spec.symbols_of(z)?;
        if zs.len() + 1 > spec.horizon || zs.contains(&target) {
            return None;
        }
        let last = zs.last().copied().unwrap_or(start);
        let w = spec.path_weight(start, &zs) * spec.weight(last, target);
        let total = spec.hit_probability(start, target, spec.horizon);
        (w > 0.0 && total > 0.0).then(|| w.ln() - total.ln())
    };
    bridge().unwrap_or(f64::NEG_INFINITY)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpertSample {
    pub continuation: Sequence,
    /// Set when no completion of the prefix reaches the outcome within the
    /// length budget and a fallback path was returned instead.
    pub degenerate: bool,
}

/// Draws from the exact posterior over bridge continuations from `from` with
/// at most `steps` transitions into `target`.
fn sample_bridge(
    spec: &TaskSpec,
    from: usize,
    target: usize,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let table = spec.hit_table(target, steps);
    let mut out = Vec::new();
    let mut u = from;
    let mut r = steps;
    loop {
        let total = table[r][u];
        let mut draw = rng.gen::<f64>() * total;
        draw -= spec.weight(u, target);
        if draw < 0.0 || r == 1 {
            return out;
        }
        let mut next = None;
        for v in (0..spec.n_symbols).filter(|&v| v != target) {
            let mass = spec.weight(u, v) * table[r - 1][v];
            if mass > 0.0 {
                next = Some(v);
                draw -= mass;
                if draw < 0.0 {
                    break;
                }
            }
        }
        // Rounding can leave a tiny positive remainder; the last candidate
        // with mass absorbs it.
        let Some(v) = next else { return out };
        out.push(v);
        u = v;
        r -= 1;
    }
}

/// Continuation of `prefix` drawn from the expert posterior over bridges of
/// at most `min(max_len, L - 1)` symbols in total.
///
/// When no completion exists, the shortest bridge from the prefix's last
/// symbol is sampled instead, ignoring the budget, and the result is flagged
/// degenerate; if the outcome is unreachable altogether the continuation is
/// empty.
pub fn expert_sample(
    spec: &TaskSpec,
    x: &[TokenId],
    y: &[TokenId],
    prefix: &[TokenId],
    seed: u64,
    max_len: usize,
) -> ExpertSample {
    let mut rng = seed::rng(seed);
    let degenerate = ExpertSample {
        continuation: Sequence::empty(),
        degenerate: true,
    };
    let (Some(start), Some(target)) = (
        x.last().and_then(|&t| spec.symbol(t)),
        y.first().and_then(|&t| spec.symbol(t)),
    ) else {
        return degenerate;
    };
    let Some(prefix_syms) = spec.symbols_of(prefix) else {
        return degenerate;
    };
    let from = prefix_syms.last().copied().unwrap_or(start);
    let budget = max_len.min(spec.horizon - 1);
    let to_tokens =
        |path: Vec<usize>| Sequence(path.into_iter().map(|s| spec.token(s)).collect());

    if spec.path_weight(start, &prefix_syms) > 0.0 && prefix_syms.len() <= budget {
        let steps = budget - prefix_syms.len() + 1;
        if spec.hit_probability(from, target, steps) > 0.0 {
            return ExpertSample {
                continuation: to_tokens(sample_bridge(spec, from, target, steps, &mut rng)),
                degenerate: false,
            };
        }
    }
    // Fallback: the first step count at which the outcome becomes reachable
    // at all; every bridge within that budget is a shortest one.
    let table = spec.hit_table(target, spec.n_symbols);
    match (1..=spec.n_symbols).find(|&r| table[r][from] > 0.0) {
        Some(steps) => ExpertSample {
            continuation: to_tokens(sample_bridge(spec, from, target, steps, &mut rng)),
            degenerate: true,
        },
        None => degenerate,
    }
}

/// Most probable bridge under the expert (ties: fewer symbols first, then
/// lowest symbol index). Empty when the outcome is unreachable.
pub fn expert_decode(spec: &TaskSpec, x: &[TokenId], y: &[TokenId], max_len: usize) -> Sequence {
    let (Some(start), Some(target)) = (
        x.last().and_then(|&t| spec.symbol(t)),
        y.first().and_then(|&t| spec.symbol(t)),
    ) else {
        return Sequence::empty();
    };
    let n = spec.n_symbols;
    let steps = max_len.min(spec.horizon - 1) + 1;
    // best[r][u] = (probability, next symbol or None for "stop here")
    let mut best = vec![vec![(0.0, None::<usize>); n]; steps + 1];
    for r in 1..=steps {
        for u in 0..n {
            let mut cell = (spec.weight(u, target), None);
            for v in (0..n).filter(|&v| v != target) {
                let p = spec.weight(u, v) * best[r - 1][v].0;
                if p > cell.0 {
                    cell = (p, Some(v));
                }
            }
            best[r][u] = cell;
        }
    }
    let mut out = Vec::new();
    let (mut u, mut r) = (start, steps);
    while let (p, Some(v)) = best[r][u] {
        if p == 0.0 {
            break;
        }
        out.push(spec.token(v));
        u = v;
        r -= 1;
    }
    Sequence(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextOutcome {
    pub x: Sequence,
    pub y: Sequence,
    pub p_true: f64,
}

fn walk(spec: &TaskSpec, start: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = vec![start];
    while out.len() < len {
        out.push(step(spec, *out.last().unwrap(), rng));
    }
    out
}

fn step(spec: &TaskSpec, u: usize, rng: &mut ChaCha8Rng) -> usize {
    let row = spec.row(u);
    let mut draw = rng.gen::<f64>();
    let mut last = 0;
    for (v, &w) in row.iter().enumerate() {
        if w > 0.0 {
            last = v;
            draw -= w;
            if draw < 0.0 {
                return v;
            }
        }
    }
    last
}

/// Samples a context and an outcome.
///
/// Common outcomes start where the walk from `last(x)` stands after a
/// uniformly drawn number of steps in `1..=L`. Uncommon outcomes start at a
/// uniform symbol and are redrawn (together with the context) until their
/// likelihood is nonzero and rates at most 2.
pub fn sample_context_outcome(
    spec: &TaskSpec,
    seed: u64,
    uncommon: bool,
    th: &RatingThresholds,
) -> Result<ContextOutcome> {
    let mut rng = seed::rng(seed);
    let n = spec.n_symbols;
    let tokens = |path: &[usize]| Sequence(path.iter().map(|&s| spec.token(s)).collect());
    for _ in 0..MAX_REJECTIONS {
        let x = walk(spec, rng.gen_range(0..n), spec.context_len, &mut rng);
        let y_start = if uncommon {
            rng.gen_range(0..n)
        } else {
            let steps = rng.gen_range(1..=spec.horizon);
            (0..steps).fold(*x.last().unwrap(), |u, _| step(spec, u, &mut rng))
        };
        let y = walk(spec, y_start, spec.outcome_len, &mut rng);
        let (x, y) = (tokens(&x), tokens(&y));
        let p_true = true_outcome_likelihood(spec, &x, &y);
        if !uncommon || (p_true > 0.0 && likelihood_to_scale(p_true, th) <= 2) {
            return Ok(ContextOutcome { x, y, p_true });
        }
    }
    Err(Error::RejectionExhausted(MAX_REJECTIONS))
}

/// `n` uncommon context-outcome pairs, pair `i` drawn with seed
/// `derive(seed, [PAIRS, i])`.
pub fn uncommon_pairs(spec: &TaskSpec, n: usize, seed: u64, th: &RatingThresholds) -> Result<Dataset> {
    let examples = (0..n)
        .map(|i| {
            let pair_seed = seed::derive(seed, &[seed::stream::PAIRS, i as u64]);
            let co = sample_context_outcome(spec, pair_seed, true, th)?;
            let mut ex = Example::new(co.x, co.y)?;
            ex.likelihood_scale = Some(likelihood_to_scale(co.p_true, th));
            Ok(ex)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(examples))
}

/// Attaches one expert posterior sample per example, example `i` seeded by
/// `derive(seed, [EXPERT, i])`. Returns the dataset and the number of
/// fallback samples.
pub fn with_expert_explanations(
    spec: &TaskSpec,
    dataset: &Dataset,
    seed: u64,
    max_len: usize,
) -> (Dataset, usize) {
    let mut degenerate = 0;
    let examples = dataset
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let s = seed::derive(seed, &[seed::stream::EXPERT, i as u64]);
            let sample = expert_sample(spec, &ex.x, &ex.y, &[], s, max_len);
            degenerate += usize::from(sample.degenerate);
            ex.clone().with_explanation(sample.continuation, Source::Expert)
        })
        .collect();
    (
        Dataset {
            examples,
            split: dataset.split,
        },
        degenerate,
    )
}

/// Keeps examples whose outcome rates at most 3 and stamps their scale.
pub fn filter_common(dataset: &Dataset, spec: &TaskSpec, th: &RatingThresholds) -> Dataset {
    let examples = dataset
        .iter()
        .filter_map(|ex| {
            let scale = likelihood_to_scale(true_outcome_likelihood(spec, &ex.x, &ex.y), th);
            (scale <= 3).then(|| {
                let mut ex = ex.clone();
                ex.likelihood_scale = Some(scale);
                ex
            })
        })
        .collect();
    Dataset {
        examples,
        split: dataset.split,
    }
}

/// Index of the candidate with the smallest `p(candidate|x)`; the first one
/// wins ties.
pub fn least_likely_index(candidates: &[Sequence], x: &[TokenId], spec: &TaskSpec) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidates to choose from"));
    }
    let mut best = (0, f64::INFINITY);
    for (i, c) in candidates.iter().enumerate() {
        let p = true_outcome_likelihood(spec, x, c);
        if p < best.1 {
            best = (i, p);
        }
    }
    Ok(best.0)
}

pub fn select_least_likely(candidates: &[Sequence], x: &[TokenId], spec: &TaskSpec) -> Result<Sequence> {
    least_likely_index(candidates, x, spec).map(|i| candidates[i].clone())
}

/// Drops an example when strictly more than half of its votes say
/// "impossible".
pub fn filter_impossible(dataset: &Dataset, votes: &[Vec<bool>]) -> Result<Dataset> {
    if votes.len() != dataset.len() {
        return Err(Error::invalid(format!(
            "{} vote lists for {} examples",
            votes.len(),
            dataset.len()
        )));
    }
    if let Some(i) = votes.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("example {i} has no votes")));
    }
    let examples = dataset
        .iter()
        .zip(votes)
        .filter(|(_, v)| 2 * v.iter().filter(|&&b| b).count() <= v.len())
        .map(|(ex, _)| ex.clone())
        .collect();
    Ok(Dataset {
        examples,
        split: dataset.split,
    })
}
