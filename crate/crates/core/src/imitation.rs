//! Behavior cloning, expert-as-oracle (EaO) and static-expert-demonstration
//! (SED) trainers.
//!
//! Both online trainers keep one aggregated dataset for the whole run and
//! append `N` new examples to it at the start of every epoch, then make one
//! shuffled mini-batch pass over everything aggregated so far.

use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::data::{Dataset, Example, Sequence, TokenId};
use crate::numerics::{grad, Optimizer, OptimizerKind, Tape, Var};
use crate::policy::{self, PolicyParams};
use crate::taskgen::{self, TaskSpec};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Prefix growth per epoch for EaO.
    pub block_size: usize,
    /// EaO prefix length in the first epoch.
    pub initial_prefix: usize,
    /// Weight of the learner-sample likelihood term in the SED objective.
    pub lambda: f64,
    /// Weight of the KL-to-initial-policy term in the SED objective.
    pub beta: f64,
    pub max_len: usize,
    pub temperature: f64,
    pub seed: u64,
    /// EaO only: exclude the learner prefix from the supervised loss.
    pub prefix_loss_masked: bool,
    pub optimizer: OptimizerKind,
    pub clip_norm: Option<f64>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            batch_size: 8,
            epochs: 5,
            block_size: 2,
            initial_prefix: 0,
            lambda: 0.1,
            beta: 0.01,
            max_len: 8,
            temperature: 1.0,
            seed: 0,
            prefix_loss_masked: false,
            optimizer: OptimizerKind::Sgd,
            clip_norm: None,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is allowed: it freezes the policy, which is handy for checks.
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && self.batch_size >= 1
            && self.epochs >= 1
            && self.lambda >= 0.0
            && self.beta >= 0.0
            && self.max_len >= 1
            && self.temperature > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid trainer config: {self:?}")))
        }
    }
}

/// One entry of the aggregated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedExample {
    pub x: Sequence,
    pub y: Sequence,
    /// Expert demonstration (SED) or spliced learner prefix plus expert
    /// continuation (EaO).
    pub z: Sequence,
    /// The learner's full sample for this entry.
    pub z_tilde: Option<Sequence>,
    /// EaO prefix length `b` in force when the entry was created.
    pub prefix_len: usize,
}

fn mean(tape: &mut Tape, terms: &[Var]) -> Var {
    let total = tape.sum(terms);
    tape.scale(total, 1.0 / terms.len().max(1) as f64)
}

fn demo(ex: &Example) -> Result<&Sequence> {
    ex.z
        .as_ref()
        .ok_or_else(|| Error::invalid("behavior cloning needs an explanation on every example"))
}

pub fn bc_loss_on(tape: &mut Tape, params: &PolicyParams, batch: &[Example]) -> Result<Var> {
    let mut terms = Vec::with_capacity(batch.len());
    for ex in batch {
        let lp = policy::sequence_logprob_on(tape, params, &ex.x, &ex.y, demo(ex)?, 0)?;
        terms.push(tape.scale(lp, -1.0));
    }
    Ok(mean(tape, &terms))
}

/// Mean negative log-likelihood of the demonstrations.
pub fn bc_loss(params: &PolicyParams, batch: &[Example]) -> Result<f64> {
    let mut tape = Tape::new(&params.set);
    let v = bc_loss_on(&mut tape, params, batch)?;
    Ok(tape.scalar(v))
}

/// Logits of the frozen policy at every step of `z`.
fn reference_logits(
    params0: &PolicyParams,
    x: &[TokenId],
    y: &[TokenId],
    z: &[TokenId],
) -> Result<Vec<Vec<f64>>> {
    (0..=z.len())
        .map(|j| policy::next_token_logits(params0, x, y, &z[..j]))
        .collect()
}

/// Mean over positions of `KL(softmax(ref_t) || softmax(logits_t))`.
fn kl_terms(tape: &mut Tape, refs: Vec<Vec<f64>>, logits: &[Var]) -> Var {
    let terms: Vec<Var> = refs
        .into_iter()
        .zip(logits)
        .map(|(p0, &l)| tape.kl_from(p0, l))
        .collect();
    mean(tape, &terms)
}

pub fn kl_to_initial_on(
    tape: &mut Tape,
    params0: &PolicyParams,
    params: &PolicyParams,
    x: &[TokenId],
    y: &[TokenId],
    z: &[TokenId],
) -> Result<Var> {
    let refs = reference_logits(params0, x, y, z)?;
    let logits = policy::step_logits_on(tape, params, x, y, z);
    Ok(kl_terms(tape, refs, &logits))
}

/// Mean over the `|z| + 1` positions of `z` (EOS step included) of
/// `KL(pi_0 || pi)`.
pub fn kl_to_initial(
    params0: &PolicyParams,
    params: &PolicyParams,
    x: &[TokenId],
    y: &[TokenId],
    z: &[TokenId],
) -> Result<f64> {
    if !params0.set.same_shape(&params.set) {
        return Err(Error::invalid("policy shapes differ"));
    }
    let mut tape = Tape::new(&params.set);
    let v = kl_to_initial_on(&mut tape, params0, params, x, y, z)?;
    Ok(tape.scalar(v))
}

pub fn sed_loss_on(
    tape: &mut Tape,
    params: &PolicyParams,
    params0: &PolicyParams,
    batch: &[AggregatedExample],
    lambda: f64,
    beta: f64,
) -> Result<Var> {
    let mut terms = Vec::with_capacity(batch.len());
    for ex in batch {
        let z_tilde = ex
            .z_tilde
            .as_ref()
            .ok_or_else(|| Error::invalid("SED entries need a learner sample"))?;
        let nll = policy::sequence_logprob_on(tape, params, &ex.x, &ex.y, &ex.z, 0)?;
        let nll = tape.scale(nll, -1.0);
        let unlikely = policy::sequence_logprob_on(tape, params, &ex.x, &ex.y, z_tilde, 0)?;
        let unlikely = tape.scale(unlikely, lambda);
        let kl = kl_to_initial_on(tape, params0, params, &ex.x, &ex.y, &ex.z)?;
        let kl = tape.scale(kl, beta);
        terms.push(tape.sum(&[nll, unlikely, kl]));
    }
    Ok(mean(tape, &terms))
}

/// Batch mean of `-log pi(z) + lambda log pi(z~) + beta KL(pi_0 || pi)`.
pub fn sed_loss(
    params: &PolicyParams,
    params0: &PolicyParams,
    batch: &[AggregatedExample],
    lambda: f64,
    beta: f64,
) -> Result<f64> {
    let mut tape = Tape::new(&params.set);
    let v = sed_loss_on(&mut tape, params, params0, batch, lambda, beta)?;
    Ok(tape.scalar(v))
}

/// Supervised loss on spliced EaO entries; with `masked`, the learner prefix
/// carries no loss.
pub fn eao_loss_on(
    tape: &mut Tape,
    params: &PolicyParams,
    batch: &[AggregatedExample],
    masked: bool,
) -> Result<Var> {
    let mut terms = Vec::with_capacity(batch.len());
    for ex in batch {
        let start = if masked { learner_prefix_len(ex) } else { 0 };
        let lp = policy::sequence_logprob_on(tape, params, &ex.x, &ex.y, &ex.z, start)?;
        terms.push(tape.scale(lp, -1.0));
    }
    Ok(mean(tape, &terms))
}

fn learner_prefix_len(ex: &AggregatedExample) -> usize {
    ex.z_tilde
        .as_ref()
        .map_or(0, |t| ex.prefix_len.min(t.len()))
}

/// The first `min(b, |learner|)` learner tokens followed by the expert
/// continuation.
pub fn splice_prefix(learner_sample: &[TokenId], expert_continuation: &[TokenId], b: usize) -> Sequence {
    let keep = b.min(learner_sample.len());
    let mut out = learner_sample[..keep].to_vec();
    out.extend_from_slice(expert_continuation);
    Sequence(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_metric: f64,
    /// EaO prefix length used in this epoch.
    pub prefix_len: Option<usize>,
    /// Size of the dataset optimized in this epoch.
    pub aggregated: usize,
    /// EaO only: expert continuations that fell back to a shortest path.
    pub degenerate: usize,
    pub params: PolicyParams,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: PolicyParams,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub aggregated: Vec<AggregatedExample>,
}

/// The entry with the highest dev metric; the earliest wins ties.
pub fn select_checkpoint(history: &[EpochRecord]) -> Result<&EpochRecord> {
    let mut best: Option<&EpochRecord> = None;
    for rec in history {
        let better = match best {
            None => true,
            Some(b) => rec.dev_metric > b.dev_metric || (b.dev_metric.is_nan() && !rec.dev_metric.is_nan()),
        };
        if better {
            best = Some(rec);
        }
    }
    best.ok_or_else(|| Error::invalid("cannot select from an empty history"))
}

/// Renders `epoch,train_loss,dev_metric,prefix_len,aggregated` lines.
pub fn render_history(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,dev_metric,prefix_len,aggregated\n");
    for r in history {
        let b = r.prefix_len.map(|b| b.to_string()).unwrap_or_default();
        writeln!(
            s,
            "{},{:?},{:?},{},{}",
            r.epoch, r.train_loss, r.dev_metric, b, r.aggregated
        )
        .unwrap();
    }
    s
}

pub type DevMetric<'a> = &'a dyn Fn(&PolicyParams) -> Result<f64>;

struct Run<'a> {
    config: &'a TrainerConfig,
    params: PolicyParams,
    optimizer: Optimizer,
}

impl<'a> Run<'a> {
    fn new(config: &'a TrainerConfig, initial: &PolicyParams) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            params: initial.clone(),
            optimizer: Optimizer::new(config.optimizer, config.lr, config.clip_norm),
        })
    }

    /// One shuffled mini-batch pass over `n` items; returns the mean batch
    /// loss measured before each update.
    fn epoch<F>(&mut self, epoch: usize, n: usize, batch_loss: F) -> Result<f64>
    where
        F: Fn(&mut Tape, &PolicyParams, &[usize]) -> Result<Var>,
    {
        let mut order: Vec<usize> = (0..n).collect();
        let shuffle_seed = seed::derive(self.config.seed, &[seed::stream::SHUFFLE, epoch as u64]);
        order.shuffle(&mut seed::rng(shuffle_seed));
        let mut total = 0.0;
        let mut batches = 0;
        for (step, idx) in order.chunks(self.config.batch_size).enumerate() {
            let params = &self.params;
            let result = grad(|tape: &mut Tape| batch_loss(tape, params, idx), &params.set);
            let (loss, g) = result.map_err(|e| Error::Diverged {
                epoch,
                step,
                message: e.to_string(),
            })?;
            let next = self.optimizer.step(&self.params.set, &g);
            if !next.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    message: "parameters became non-finite".into(),
                });
            }
            self.params = self.params.with_set(next);
            total += loss;
            batches += 1;
        }
        Ok(if batches == 0 { 0.0 } else { total / batches as f64 })
    }
}

fn finish(history: Vec<EpochRecord>, aggregated: Vec<AggregatedExample>) -> Result<TrainOutcome> {
    let best = select_checkpoint(&history)?;
    Ok(TrainOutcome {
        best: best.params.clone(),
        best_epoch: best.epoch,
        aggregated,
        history,
    })
}

/// Behavior cloning: `epochs` passes of mini-batch descent on [`bc_loss`].
pub fn train_bc(
    config: &TrainerConfig,
    initial: &PolicyParams,
    train: &Dataset,
    dev_metric: DevMetric,
) -> Result<TrainOutcome> {
    let mut run = Run::new(config, initial)?;
    for ex in train.iter() {
        demo(ex)?;
    }
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let loss = run.epoch(epoch, train.len(), |tape, params, idx| {
            let batch: Vec<Example> = idx.iter().map(|&i| train.examples[i].clone()).collect();
            bc_loss_on(tape, params, &batch)
        })?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss,
            dev_metric: dev_metric(&run.params)?,
            prefix_len: None,
            aggregated: train.len(),
            degenerate: 0,
            params: run.params.clone(),
        });
    }
    finish(history, Vec::new())
}

fn learner_seed(config: &TrainerConfig, epoch: usize, index: usize) -> u64 {
    seed::derive(config.seed, &[seed::stream::LEARNER, epoch as u64, index as u64])
}

/// Online training with static expert demonstrations: every epoch samples a
/// fresh `z~` per example from the current policy, appends `(x, y, z, z~)` to
/// the aggregate, and descends the SED objective over the whole aggregate.
pub fn train_sed(
    config: &TrainerConfig,
    initial: &PolicyParams,
    train: &Dataset,
    dev_metric: DevMetric,
) -> Result<TrainOutcome> {
    let mut run = Run::new(config, initial)?;
    let mut aggregated: Vec<AggregatedExample> = Vec::new();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        for (j, ex) in train.iter().enumerate() {
            let z = demo(ex)?.clone();
            let z_tilde = policy::sample_sequence(
                &run.params,
                &ex.x,
                &ex.y,
                learner_seed(config, epoch, j),
                config.max_len,
                config.temperature,
            )?;
            aggregated.push(AggregatedExample {
                x: ex.x.clone(),
                y: ex.y.clone(),
                z,
                z_tilde: Some(z_tilde),
                prefix_len: 0,
            });
        }
        let data = &aggregated;
        let loss = run.epoch(epoch, data.len(), |tape, params, idx| {
            let batch: Vec<AggregatedExample> = idx.iter().map(|&i| data[i].clone()).collect();
            sed_loss_on(tape, params, initial, &batch, config.lambda, config.beta)
        })?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss,
            dev_metric: dev_metric(&run.params)?,
            prefix_len: None,
            aggregated: aggregated.len(),
            degenerate: 0,
            params: run.params.clone(),
        });
    }
    finish(history, aggregated)
}

/// Expert as oracle: every epoch the learner samples `z~`, the expert
/// completes `z~[..b]`, the spliced sequence is aggregated, the policy is
/// trained on the aggregate, and `b` grows by the block size.
pub fn train_eao(
    config: &TrainerConfig,
    initial: &PolicyParams,
    train: &Dataset,
    spec: &TaskSpec,
    dev_metric: DevMetric,
) -> Result<TrainOutcome> {
    let mut run = Run::new(config, initial)?;
    let mut aggregated: Vec<AggregatedExample> = Vec::new();
    let mut history = Vec::with_capacity(config.epochs);
    let mut b = config.initial_prefix;
    for epoch in 1..=config.epochs {
        let mut degenerate = 0;
        for (j, ex) in train.iter().enumerate() {
            let z_tilde = policy::sample_sequence(
                &run.params,
                &ex.x,
                &ex.y,
                learner_seed(config, epoch, j),
                config.max_len,
                config.temperature,
            )?;
            let prefix = &z_tilde[..b.min(z_tilde.len())];
            let oracle_seed = seed::derive(config.seed, &[seed::stream::ORACLE, epoch as u64, j as u64]);
            let expert = taskgen::expert_sample(spec, &ex.x, &ex.y, prefix, oracle_seed, config.max_len);
            degenerate += usize::from(expert.degenerate);
            aggregated.push(AggregatedExample {
                x: ex.x.clone(),
                y: ex.y.clone(),
                z: splice_prefix(&z_tilde, &expert.continuation, b),
                z_tilde: Some(z_tilde),
                prefix_len: b,
            });
        }
        let data = &aggregated;
        let masked = config.prefix_loss_masked;
        let loss = run.epoch(epoch, data.len(), |tape, params, idx| {
            let batch: Vec<AggregatedExample> = idx.iter().map(|&i| data[i].clone()).collect();
            eao_loss_on(tape, params, &batch, masked)
        })?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss,
            dev_metric: dev_metric(&run.params)?,
            prefix_len: Some(b),
            aggregated: aggregated.len(),
            degenerate,
            params: run.params.clone(),
        });
        b += config.block_size;
    }
    finish(history, aggregated)
}
