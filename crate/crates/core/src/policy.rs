//! The learner policy `pi(z_j | x, y, z_<j)`.
//!
//! The conditioning stream is `[BOS, x, SEP, y, SEP, z_<j]`. The policy reads
//! the last `window` tokens of the stream (left-padded with BOS) plus the
//! mean embedding of the whole stream:
//!
//! ```text
//! h      = tanh(concat(E[w_1..w_W]) H + mean(E[stream]) S + b_h)
//! logits = h O + b_o
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::data::{Sequence, TokenId, BOS, EOS, SEP};
use crate::numerics::{softmax_of, Array, ParamSet, Tape, Var};
use crate::{seed, Error, Result};

pub const EMBED: usize = 0;
pub const SUMMARY: usize = 1;
pub const HIDDEN: usize = 2;
pub const HIDDEN_BIAS: usize = 3;
pub const OUTPUT: usize = 4;
pub const OUTPUT_BIAS: usize = 5;

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub vocab_size: usize,
    pub d: usize,
    pub window: usize,
    pub set: ParamSet,
}

/// Number of parameters for the given shape.
pub fn param_count(vocab_size: usize, d: usize, window: usize) -> usize {
    vocab_size * d + d * d + window * d * d + d + d * vocab_size + vocab_size
}

fn shapes(vocab_size: usize, d: usize, window: usize) -> [(&'static str, usize, usize); 6] {
    [
        ("embed", vocab_size, d),
        ("summary", d, d),
        ("hidden", window * d, d),
        ("hidden_bias", 1, d),
        ("output", d, vocab_size),
        ("output_bias", 1, vocab_size),
    ]
}

impl PolicyParams {
    pub fn zeros(vocab_size: usize, d: usize, window: usize) -> Self {
        let set = ParamSet {
            arrays: shapes(vocab_size, d, window)
                .iter()
                .map(|&(name, r, c)| Array::zeros(name, r, c))
                .collect(),
        };
        Self {
            vocab_size,
            d,
            window,
            set,
        }
    }

    pub fn param_count(&self) -> usize {
        self.set.len()
    }

    pub fn with_set(&self, set: ParamSet) -> Self {
        Self {
            vocab_size: self.vocab_size,
            d: self.d,
            window: self.window,
            set,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "abduction-checkpoint").unwrap();
        writeln!(s, "format_version {FORMAT_VERSION}").unwrap();
        writeln!(s, "vocab_size {}", self.vocab_size).unwrap();
        writeln!(s, "d {}", self.d).unwrap();
        writeln!(s, "window {}", self.window).unwrap();
        for a in &self.set.arrays {
            writeln!(s, "array {} {} {}", a.name, a.rows, a.cols).unwrap();
            for r in 0..a.rows {
                let row: Vec<String> = a.row(r).iter().map(|v| format!("{v:?}")).collect();
                writeln!(s, "{}", row.join(" ")).unwrap();
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("unexpected end of checkpoint, expected {what}"),
            })
        };
        let (i, magic) = next("header")?;
        if magic.trim() != "abduction-checkpoint" {
            return Err(Error::Parse {
                line: i + 1,
                message: "not a checkpoint file".into(),
            });
        }
        let mut header = |key: &str| -> Result<usize> {
            let (i, line) = next(key)?;
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next().map(str::parse::<usize>)) {
                (Some(k), Some(Ok(v))) if k == key => Ok(v),
                _ => Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected `{key} <integer>`"),
                }),
            }
        };
        let version = header("format_version")?;
        if version != FORMAT_VERSION as usize {
            return Err(Error::invalid(format!("unsupported checkpoint version {version}")));
        }
        let vocab_size = header("vocab_size")?;
        let d = header("d")?;
        let window = header("window")?;
        let mut params = Self::zeros(vocab_size, d, window);
        for a in params.set.arrays.iter_mut() {
            let (i, line) = next("array header")?;
            let expected = format!("array {} {} {}", a.name, a.rows, a.cols);
            if line.split_whitespace().collect::<Vec<_>>().join(" ") != expected {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected `{expected}`"),
                });
            }
            for r in 0..a.rows {
                let (i, line) = next("array row")?;
                let values: Vec<f64> = line
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse {
                        line: i + 1,
                        message: format!("bad value: {e}"),
                    })?;
                if values.len() != a.cols {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: format!("expected {} values, found {}", a.cols, values.len()),
                    });
                }
                a.data[r * a.cols..(r + 1) * a.cols].copy_from_slice(&values);
            }
        }
        if !params.set.is_finite() {
            return Err(Error::NonFinite("checkpoint values".into()));
        }
        Ok(params)
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

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases. The
/// embedding table counts its row width as fan-in.
pub fn init_params(seed: u64, vocab_size: usize, d: usize, window: usize) -> Result<PolicyParams> {
    if d < 2 || window < 1 || vocab_size < 4 {
        return Err(Error::invalid("policy needs d >= 2, window >= 1, vocab >= 4"));
    }
    let mut params = PolicyParams::zeros(vocab_size, d, window);
    let mut rng = seed::rng(seed);
    let fan_in = [d, d, window * d, 0, d, 0];
    for (a, &fan) in params.set.arrays.iter_mut().zip(&fan_in) {
        if fan == 0 {
            continue;
        }
        let s = 1.0 / (fan as f64).sqrt();
        a.data.iter_mut().for_each(|v| *v = rng.gen_range(-s..s));
    }
    Ok(params)
}

/// Probabilities over the whole vocabulary, EOS included.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub probs: Vec<f64>,
}

impl Distribution {
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best as TokenId
    }
}

fn stream(x: &[TokenId], y: &[TokenId], prefix: &[TokenId]) -> Vec<TokenId> {
    let mut s = Vec::with_capacity(x.len() + y.len() + prefix.len() + 3);
    s.push(BOS);
    s.extend_from_slice(x);
    s.push(SEP);
    s.extend_from_slice(y);
    s.push(SEP);
    s.extend_from_slice(prefix);
    s
}

fn check_tokens(params: &PolicyParams, seqs: &[&[TokenId]]) -> Result<()> {
    for &t in seqs.iter().flat_map(|s| s.iter()) {
        if t as usize >= params.vocab_size {
            return Err(Error::TokenOutOfRange {
                index: t,
                size: params.vocab_size,
            });
        }
    }
    Ok(())
}

/// Records the logits for the token following `stream` on `tape`.
fn logits_on(tape: &mut Tape, params: &PolicyParams, stream: &[TokenId]) -> Var {
    let w = params.window;
    let pad = w.saturating_sub(stream.len());
    let tail = &stream[stream.len().saturating_sub(w)..];
    let slots: Vec<Var> = std::iter::repeat_n(BOS, pad)
        .chain(tail.iter().copied())
        .map(|t| tape.gather(EMBED, t as usize))
        .collect();
    let window = tape.concat(&slots);
    let local = tape.vec_mat(window, HIDDEN);
    let rows: Vec<usize> = stream.iter().map(|&t| t as usize).collect();
    let mean = tape.mean_rows(EMBED, &rows);
    let summary = tape.vec_mat(mean, SUMMARY);
    let pre = tape.add(local, summary);
    let pre = tape.add_bias(pre, HIDDEN_BIAS);
    let h = tape.tanh(pre);
    let out = tape.vec_mat(h, OUTPUT);
    tape.add_bias(out, OUTPUT_BIAS)
}

/// Raw next-token logits.
pub fn next_token_logits(
    params: &PolicyParams,
    x: &[TokenId],
    y: &[TokenId],
    prefix: &[TokenId],
) -> Result<Vec<f64>> {
    check_tokens(params, &[x, y, prefix])?;
    let mut tape = Tape::new(&params.set);
    let v = logits_on(&mut tape, params, &stream(x, y, prefix));
    let logits = tape.value(v).to_vec();
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("policy logits".into()));
    }
    Ok(logits)
}

pub fn next_token_dist(
    params: &PolicyParams,
    x: &[TokenId],
    y: &[TokenId],
    prefix: &[TokenId],
) -> Result<Distribution> {
    Ok(Distribution {
        probs: softmax_of(&next_token_logits(params, x, y, prefix)?),
    })
}

/// Per-position logits for every step of `z` plus the final EOS step.
pub fn step_logits_on(
    tape: &mut Tape,
    params: &PolicyParams,
    x: &[TokenId],
    y: &[TokenId],
    z: &[TokenId],
) -> Vec<Var> {
    let full = stream(x, y, z);
    let base = full.len() - z.len();
    (0..=z.len())
        .map(|j| logits_on(tape, params, &full[..base + j]))
        .collect()
}

/// `sum_{j >= start} log pi(z_j | ...) + log pi(EOS | x, y, z)` as a tape
/// scalar. `start > 0` skips the loss on a leading prefix.
pub fn sequence_logprob_on(
    tape: &mut Tape,
    params: &PolicyParams,
    x: &[TokenId],
    y: &[TokenId],
    z: &[TokenId],
    start: usize,
) -> Result<Var> {
    check_tokens(params, &[x, y, z])?;
    let steps = step_logits_on(tape, params, x, y, z);
    let terms: Vec<Var> = steps
        .into_iter()
        .enumerate()
        .filter(|(j, _)| *j >= start.min(z.len()))
        .map(|(j, logits)| {
            let target = z.get(j).copied().unwrap_or(EOS);
            tape.log_softmax_at(logits, target as usize)
        })
        .collect();
    Ok(tape.sum(&terms))
}

pub fn sequence_logprob(params: &PolicyParams, x: &[TokenId], y: &[TokenId], z: &[TokenId]) -> Result<f64> {
    let mut tape = Tape::new(&params.set);
    let v = sequence_logprob_on(&mut tape, params, x, y, z, 0)?;
    Ok(tape.scalar(v))
}

fn draw(probs: &[f64], rng: &mut impl Rng) -> TokenId {
    let mut u = rng.gen::<f64>();
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last = i;
            u -= p;
            if u < 0.0 {
                return i as TokenId;
            }
        }
    }
    last as TokenId
}

/// Ancestral sampling with temperature-scaled logits; stops at EOS or after
/// `max_len` tokens.
pub fn sample_sequence(
    params: &PolicyParams,
    x: &[TokenId],
    y: &[TokenId],
    seed: u64,
    max_len: usize,
    temperature: f64,
) -> Result<Sequence> {
    if temperature.is_nan() || temperature <= 0.0 || max_len == 0 {
        return Err(Error::invalid("sampling needs temperature > 0 and max_len >= 1"));
    }
    let mut rng = seed::rng(seed);
    let mut z = Vec::new();
    while z.len() < max_len {
        let logits = next_token_logits(params, x, y, &z)?;
        let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
        let t = draw(&softmax_of(&scaled), &mut rng);
        if t == EOS {
            break;
        }
        z.push(t);
    }
    Ok(Sequence(z))
}

/// Argmax decoding, ties to the lowest token index.
pub fn greedy_decode(params: &PolicyParams, x: &[TokenId], y: &[TokenId], max_len: usize) -> Result<Sequence> {
    let mut z = Vec::new();
    while z.len() < max_len {
        let logits = next_token_logits(params, x, y, &z)?;
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        if best as TokenId == EOS {
            break;
        }
        z.push(best as TokenId);
    }
    Ok(Sequence(z))
}
