//! Automatic judging and pairwise preference accounting.
//!
//! The judge scores an explanation by how much it raises the outcome's
//! likelihood, `delta = p(y|x,z) - p(y|x)`. Two explanations are compared on
//! their deltas and the verdict falls into one of four categories: win,
//! equally good, equally bad, or lose.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::Serialize;

use crate::data::{Dataset, Sequence, TokenId};
use crate::policy::{self, PolicyParams};
use crate::taskgen::{self, likelihood_to_scale, RatingThresholds, TaskSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JudgeScore {
    pub delta: f64,
    pub p_cond: f64,
    pub scale: u8,
}

pub fn judge_with(
    spec: &TaskSpec,
    x: &[TokenId],
    y: &[TokenId],
    z: &[TokenId],
    th: &RatingThresholds,
) -> JudgeScore {
    let p_cond = taskgen::conditioned_outcome_likelihood(spec, x, y, z);
    let base = taskgen::true_outcome_likelihood(spec, x, y);
    JudgeScore {
        delta: p_cond - base,
        p_cond,
        scale: likelihood_to_scale(p_cond, th),
    }
}

pub fn judge(spec: &TaskSpec, x: &[TokenId], y: &[TokenId], z: &[TokenId]) -> JudgeScore {
    judge_with(spec, x, y, z, &RatingThresholds::default())
}

/// Whether `z` makes the outcome strictly more likely than the context alone.
pub fn is_plausible(score: &JudgeScore) -> bool {
    score.delta > 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Win,
    EqGood,
    EqBad,
    Lose,
}

impl Verdict {
    pub fn flipped(self) -> Self {
        match self {
            Verdict::Win => Verdict::Lose,
            Verdict::Lose => Verdict::Win,
            v => v,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Win => "win",
            Verdict::EqGood => "eq_good",
            Verdict::EqBad => "eq_bad",
            Verdict::Lose => "lose",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JudgeParams {
    /// Minimum delta for a tie to count as "equally good".
    pub tau: f64,
    /// Largest delta gap still counted as a tie.
    pub tie_eps: f64,
}

impl Default for JudgeParams {
    fn default() -> Self {
        Self {
            tau: 0.05,
            tie_eps: 0.01,
        }
    }
}

impl JudgeParams {
    pub fn validate(&self) -> Result<()> {
        if self.tau > 0.0 && self.tie_eps >= 0.0 {
            Ok(())
        } else {
            Err(Error::invalid("judge needs tau > 0 and tie_eps >= 0"))
        }
    }
}

/// Verdict for `a` against `b`.
pub fn pairwise_verdict(a: &JudgeScore, b: &JudgeScore, tau: f64, tie_eps: f64) -> Verdict {
    if (a.delta - b.delta).abs() <= tie_eps {
        if a.delta >= tau && b.delta >= tau {
            Verdict::EqGood
        } else {
            Verdict::EqBad
        }
    } else if a.delta > b.delta {
        Verdict::Win
    } else {
        Verdict::Lose
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct VerdictTally {
    pub win: usize,
    pub eq_good: usize,
    pub eq_bad: usize,
    pub lose: usize,
}

impl VerdictTally {
    pub fn add(&mut self, v: Verdict) {
        match v {
            Verdict::Win => self.win += 1,
            Verdict::EqGood => self.eq_good += 1,
            Verdict::EqBad => self.eq_bad += 1,
            Verdict::Lose => self.lose += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.win + self.eq_good + self.eq_bad + self.lose
    }

    pub fn tie(&self) -> usize {
        self.eq_good + self.eq_bad
    }

    fn pct(&self, count: usize) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            100.0 * count as f64 / self.total() as f64
        }
    }

    pub fn lose_rate(&self) -> f64 {
        self.pct(self.lose) / 100.0
    }

    /// `[win, eq_good, eq_bad, lose]` in percent.
    pub fn percentages(&self) -> [f64; 4] {
        [
            self.pct(self.win),
            self.pct(self.eq_good),
            self.pct(self.eq_bad),
            self.pct(self.lose),
        ]
    }
}

/// Explanations of one named system, aligned with the evaluated examples.
#[derive(Debug, Clone)]
pub struct SystemOutputs {
    pub name: String,
    pub outputs: Vec<Sequence>,
}

fn aligned<'a>(
    examples: &Dataset,
    systems: &'a [SystemOutputs],
    reference: &str,
) -> Result<&'a SystemOutputs> {
    for s in systems {
        if s.outputs.len() != examples.len() {
            return Err(Error::invalid(format!(
                "system `{}` has {} outputs for {} examples",
                s.name,
                s.outputs.len(),
                examples.len()
            )));
        }
    }
    systems
        .iter()
        .find(|s| s.name == reference)
        .ok_or_else(|| Error::invalid(format!("reference system `{reference}` not found")))
}

/// Tallies every system against the reference system, example by example.
pub fn win_rate_table(
    examples: &Dataset,
    systems: &[SystemOutputs],
    reference: &str,
    spec: &TaskSpec,
    params: &JudgeParams,
) -> Result<Vec<(String, VerdictTally)>> {
    params.validate()?;
    let reference = aligned(examples, systems, reference)?;
    let ref_scores: Vec<JudgeScore> = examples
        .iter()
        .zip(&reference.outputs)
        .map(|(ex, z)| judge(spec, &ex.x, &ex.y, z))
        .collect();
    Ok(systems
        .iter()
        .map(|s| {
            let mut tally = VerdictTally::default();
            for ((ex, z), r) in examples.iter().zip(&s.outputs).zip(&ref_scores) {
                let score = judge(spec, &ex.x, &ex.y, z);
                tally.add(pairwise_verdict(&score, r, params.tau, params.tie_eps));
            }
            (s.name.clone(), tally)
        })
        .collect())
}

/// Longest-common-subsequence F-measure; 0 when either side is empty.
pub fn lcs_fscore(hypothesis: &[TokenId], reference: &[TokenId]) -> f64 {
    if hypothesis.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut prev = vec![0usize; reference.len() + 1];
    let mut cur = vec![0usize; reference.len() + 1];
    for h in hypothesis {
        for (j, r) in reference.iter().enumerate() {
            cur[j + 1] = if h == r {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let lcs = prev[reference.len()] as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / hypothesis.len() as f64;
    let r = lcs / reference.len() as f64;
    2.0 * p * r / (p + r)
}

fn counts(seq: &[TokenId]) -> BTreeMap<TokenId, usize> {
    let mut m = BTreeMap::new();
    for &t in seq {
        *m.entry(t).or_insert(0) += 1;
    }
    m
}

/// Multiset-overlap F1.
pub fn token_f1(hypothesis: &[TokenId], reference: &[TokenId]) -> f64 {
    if hypothesis.is_empty() || reference.is_empty() {
        return if hypothesis == reference { 1.0 } else { 0.0 };
    }
    let h = counts(hypothesis);
    let r = counts(reference);
    let overlap: usize = h.iter().map(|(t, c)| (*c).min(*r.get(t).unwrap_or(&0))).sum();
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / hypothesis.len() as f64;
    let rc = overlap as f64 / reference.len() as f64;
    2.0 * p * rc / (p + rc)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemReport {
    pub system: String,
    pub tally: VerdictTally,
    pub mean_delta: f64,
    pub lcs_f: f64,
    pub token_f1: f64,
}

/// Full report: verdicts against the reference plus mean judge delta and the
/// overlap metrics against the reference outputs.
pub fn evaluate_systems(
    examples: &Dataset,
    systems: &[SystemOutputs],
    reference: &str,
    spec: &TaskSpec,
    params: &JudgeParams,
) -> Result<Vec<SystemReport>> {
    let tallies = win_rate_table(examples, systems, reference, spec, params)?;
    let reference = aligned(examples, systems, reference)?;
    let n = examples.len().max(1) as f64;
    Ok(systems
        .iter()
        .zip(tallies)
        .map(|(s, (_, tally))| {
            let mut delta = 0.0;
            let mut lcs = 0.0;
            let mut f1 = 0.0;
            for ((ex, z), r) in examples.iter().zip(&s.outputs).zip(&reference.outputs) {
                delta += judge(spec, &ex.x, &ex.y, z).delta;
                lcs += lcs_fscore(z, r);
                f1 += token_f1(z, r);
            }
            SystemReport {
                system: s.name.clone(),
                tally,
                mean_delta: delta / n,
                lcs_f: lcs / n,
                token_f1: f1 / n,
            }
        })
        .collect())
}

pub const REPORT_HEADER: &str = "system,win,eq_good,eq_bad,lose,mean_delta,lcs_f,token_f1";

pub fn render_report(rows: &[SystemReport]) -> String {
    let mut s = format!("{REPORT_HEADER}\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{:.6},{:.6},{:.6}",
            r.system, r.tally.win, r.tally.eq_good, r.tally.eq_bad, r.tally.lose, r.mean_delta, r.lcs_f, r.token_f1
        )
        .unwrap();
    }
    s
}

/// Percent table with equally-good and equally-bad both split and merged.
pub fn render_percentages(rows: &[SystemReport]) -> String {
    let mut s = String::from("system,win,eq_good,eq_bad,tie,lose\n");
    for r in rows {
        let [w, g, b, l] = r.tally.percentages();
        writeln!(s, "{},{w:.1},{g:.1},{b:.1},{:.1},{l:.1}", r.system, g + b).unwrap();
    }
    s
}

/// Greedy decodes of the policy for every example.
pub fn decode_all(params: &PolicyParams, examples: &Dataset, max_len: usize) -> Result<Vec<Sequence>> {
    examples
        .iter()
        .map(|ex| policy::greedy_decode(params, &ex.x, &ex.y, max_len))
        .collect()
}

/// Most probable expert bridge for every example.
pub fn expert_decodes(spec: &TaskSpec, examples: &Dataset, max_len: usize) -> Vec<Sequence> {
    examples
        .iter()
        .map(|ex| taskgen::expert_decode(spec, &ex.x, &ex.y, max_len))
        .collect()
}

/// Mean judge delta of the policy's greedy decodes; the dev-set metric used
/// for checkpoint selection.
pub fn dev_metric(spec: &TaskSpec, params: &PolicyParams, dev: &Dataset, max_len: usize) -> Result<f64> {
    if dev.is_empty() {
        return Ok(0.0);
    }
    let decodes = decode_all(params, dev, max_len)?;
    let total: f64 = dev
        .iter()
        .zip(&decodes)
        .map(|(ex, z)| judge(spec, &ex.x, &ex.y, z).delta)
        .sum();
    Ok(total / dev.len() as f64)
}
