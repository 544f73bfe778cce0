//! Vocabulary, sequences, examples and the line-oriented dataset file.
//!
//! A dataset file holds one JSON object per line:
//!
//! ```text
//! {"x":"s0 s3","y":"s1","z":"s2","source":"expert","likelihood_scale":2}
//! ```
//!
//! `x` and `y` are required; `z`, `source` and `likelihood_scale` are
//! optional. Token fields are space-separated symbol strings. Unknown fields
//! are ignored on load.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::ops::Deref;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result};

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const SEP: TokenId = 2;
/// Index of the first non-reserved symbol.
pub const FIRST_SYMBOL: TokenId = 3;

const RESERVED: [&str; 3] = ["<bos>", "<eos>", "<sep>"];

/// Token alphabet. Indices 0, 1 and 2 are always BOS, EOS and SEP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds a vocabulary from content symbols; the reserved tokens are
    /// prepended automatically.
    pub fn new<S: AsRef<str>>(content: &[S]) -> Result<Self> {
        if content.is_empty() {
            return Err(Error::invalid("vocabulary needs at least one content symbol"));
        }
        let mut symbols: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index = HashMap::new();
        for (i, s) in symbols.iter().enumerate() {
            index.insert(s.clone(), i as TokenId);
        }
        for s in content {
            let s = s.as_ref();
            if s.is_empty() || s.contains(char::is_whitespace) {
                return Err(Error::invalid(format!("invalid symbol `{s}`")));
            }
            if index.contains_key(s) {
                return Err(Error::invalid(format!("duplicate symbol `{s}`")));
            }
            index.insert(s.to_string(), symbols.len() as TokenId);
            symbols.push(s.to_string());
        }
        Ok(Self { symbols, index })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn symbol(&self, id: TokenId) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, symbol: &str) -> Option<TokenId> {
        self.index.get(symbol).copied()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Parses space-separated symbols.
    pub fn tokenize(&self, text: &str) -> Result<Sequence> {
        text.split_whitespace()
            .map(|s| self.id(s).ok_or_else(|| Error::UnknownToken(s.to_string())))
            .collect::<Result<Vec<_>>>()
            .map(Sequence)
    }

    /// Joins symbols with single spaces.
    pub fn detokenize(&self, seq: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for (i, &t) in seq.iter().enumerate() {
            let s = self.symbol(t).ok_or(Error::TokenOutOfRange {
                index: t,
                size: self.len(),
            })?;
            if i > 0 {
                out.push(' ');
            }
            out.push_str(s);
        }
        Ok(out)
    }
}

/// A list of token indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sequence(pub Vec<TokenId>);

impl Sequence {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        Self(tokens)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<TokenId> {
        self.0
    }
}

impl Deref for Sequence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for Sequence {
    fn from(v: Vec<TokenId>) -> Self {
        Self(v)
    }
}

impl From<&[TokenId]> for Sequence {
    fn from(v: &[TokenId]) -> Self {
        Self(v.to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Expert,
    Learner,
    Spliced,
    HumanFile,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Expert => "expert",
            Source::Learner => "learner",
            Source::Spliced => "spliced",
            Source::HumanFile => "human-file",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub x: Sequence,
    pub y: Sequence,
    pub z: Option<Sequence>,
    pub source: Source,
    pub likelihood_scale: Option<u8>,
}

impl Example {
    pub fn new(x: Sequence, y: Sequence) -> Result<Self> {
        if x.is_empty() || y.is_empty() {
            return Err(Error::invalid("context and outcome must be non-empty"));
        }
        Ok(Self {
            x,
            y,
            z: None,
            source: Source::HumanFile,
            likelihood_scale: None,
        })
    }

    pub fn with_explanation(mut self, z: Sequence, source: Source) -> Self {
        self.z = Some(z);
        self.source = source;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub split: Option<Split>,
}

impl Dataset {
    pub fn new(examples: Vec<Example>) -> Self {
        Self {
            examples,
            split: None,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Example> {
        self.examples.iter()
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    x: String,
    y: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    z: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<Source>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    likelihood_scale: Option<u8>,
}

fn parse_record(line: &str, vocab: &Vocab) -> std::result::Result<Example, String> {
    let rec: Record = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let tok = |s: &str| vocab.tokenize(s).map_err(|e| e.to_string());
    let x = tok(&rec.x)?;
    let y = tok(&rec.y)?;
    if x.is_empty() || y.is_empty() {
        return Err("fields `x` and `y` must be non-empty".into());
    }
    let z = rec.z.as_deref().map(tok).transpose()?;
    if let Some(s) = rec.likelihood_scale {
        if !(1..=5).contains(&s) {
            return Err(format!("likelihood_scale {s} outside 1..5"));
        }
    }
    Ok(Example {
        x,
        y,
        z,
        source: rec.source.unwrap_or(Source::HumanFile),
        likelihood_scale: rec.likelihood_scale,
    })
}

/// Parses dataset text. Blank lines are skipped; line numbers in errors are
/// 1-based.
pub fn parse_dataset(text: &str, vocab: &Vocab) -> Result<Dataset> {
    let mut examples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex = parse_record(line, vocab).map_err(|message| Error::Parse {
            line: i + 1,
            message,
        })?;
        examples.push(ex);
    }
    Ok(Dataset::new(examples))
}

pub fn load_dataset(path: impl AsRef<Path>, vocab: &Vocab) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, vocab)
}

pub fn render_dataset(dataset: &Dataset, vocab: &Vocab) -> Result<String> {
    let mut out = String::new();
    for ex in &dataset.examples {
        let rec = Record {
            x: vocab.detokenize(&ex.x)?,
            y: vocab.detokenize(&ex.y)?,
            z: ex.z.as_ref().map(|z| vocab.detokenize(z)).transpose()?,
            source: Some(ex.source),
            likelihood_scale: ex.likelihood_scale,
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    Ok(out)
}

pub fn save_dataset(dataset: &Dataset, vocab: &Vocab, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = render_dataset(dataset, vocab)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Collects every distinct whitespace-separated symbol of a dataset file, in
/// order of first appearance, into a vocabulary. Used for files that were not
/// produced by a synthetic world.
pub fn infer_vocab(text: &str) -> Result<Vocab> {
    let mut seen = Vec::<String>::new();
    let mut known = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        for field in [Some(&rec.x), Some(&rec.y), rec.z.as_ref()].into_iter().flatten() {
            for s in field.split_whitespace() {
                if RESERVED.contains(&s) {
                    continue;
                }
                if known.insert(s.to_string()) {
                    seen.push(s.to_string());
                }
            }
        }
    }
    if seen.is_empty() {
        seen.push("<unk>".into());
    }
    Vocab::new(&seen)
}

/// Seeded partition into train, dev and test.
///
/// Dev and test receive `floor(n * fraction)` examples each; whatever remains
/// goes to train.
pub fn split_dataset(
    dataset: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (ftr, fdev, ftest) = fractions;
    if [ftr, fdev, ftest].iter().any(|f| f.is_nan() || *f < 0.0) || (ftr + fdev + ftest - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions must be nonnegative and sum to 1, got {fractions:?}"
        )));
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed::derive(seed, &[seed::stream::SPLIT])));
    // The epsilon absorbs representation error such as 300 * (1/6) < 50.
    let take = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
    let n_dev = take(fdev);
    let n_test = take(ftest).min(n - n_dev);
    let n_train = n - n_dev - n_test;

    let pick = |range: std::ops::Range<usize>, split: Split| Dataset {
        examples: order[range].iter().map(|&i| dataset.examples[i].clone()).collect(),
        split: Some(split),
    };
    Ok((
        pick(0..n_train, Split::Train),
        pick(n_train..n_train + n_dev, Split::Dev),
        pick(n_train + n_dev..n, Split::Test),
    ))
}
