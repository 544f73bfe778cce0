//! Run configuration: a TOML file with dotted sections, overridable from the
//! command line with `--section.key=value`.

use std::path::{Path, PathBuf};

use abduction::eval::JudgeParams;
use abduction::imitation::TrainerConfig;
use abduction::numerics::OptimizerKind;
use abduction::taskgen::{RatingThresholds, WorldConfig};
use anyhow::{bail, Context, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Directory holding `world.txt` and the split files; defaults to `out`.
    pub data: Option<PathBuf>,
    pub world: WorldSection,
    pub dataset: DatasetSection,
    pub policy: PolicySection,
    pub train: TrainSection,
    pub judge: JudgeSection,
    pub analyze: AnalyzeSection,
    pub gradcheck: GradcheckSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("run"),
            data: None,
            world: WorldSection::default(),
            dataset: DatasetSection::default(),
            policy: PolicySection::default(),
            train: TrainSection::default(),
            judge: JudgeSection::default(),
            analyze: AnalyzeSection::default(),
            gradcheck: GradcheckSection::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    pub n_symbols: usize,
    pub sparsity: f64,
    pub horizon: usize,
    pub context_len: usize,
    pub outcome_len: usize,
}

impl Default for WorldSection {
    fn default() -> Self {
        Self {
            n_symbols: 8,
            sparsity: 0.3,
            horizon: 4,
            context_len: 2,
            outcome_len: 1,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub pairs: usize,
    pub dev_fraction: f64,
    pub test_fraction: f64,
    /// `[t5, t4, t3, t2]`.
    pub thresholds: [f64; 4],
}

impl Default for DatasetSection {
    fn default() -> Self {
        let th = RatingThresholds::default();
        Self {
            pairs: 300,
            dev_fraction: 1.0 / 6.0,
            test_fraction: 1.0 / 6.0,
            thresholds: [th.t5, th.t4, th.t3, th.t2],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub d: usize,
    pub window: usize,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self { d: 8, window: 6 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub block_size: usize,
    pub initial_prefix: usize,
    pub lambda: f64,
    pub beta: f64,
    pub max_len: usize,
    pub temperature: f64,
    pub prefix_loss_masked: bool,
    /// 0 selects plain SGD.
    pub momentum: f64,
    pub clip_norm: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainerConfig::default();
        Self {
            lr: 1e-2,
            batch_size: t.batch_size,
            epochs: t.epochs,
            block_size: t.block_size,
            initial_prefix: t.initial_prefix,
            lambda: t.lambda,
            beta: t.beta,
            max_len: 3,
            temperature: t.temperature,
            prefix_loss_masked: t.prefix_loss_masked,
            momentum: 0.0,
            clip_norm: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeSection {
    pub tau: f64,
    pub tie_eps: f64,
    /// Relevance margin.
    pub epsilon: f64,
}

impl Default for JudgeSection {
    fn default() -> Self {
        let j = JudgeParams::default();
        Self {
            tau: j.tau,
            tie_eps: j.tie_eps,
            epsilon: 0.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSection {
    pub bootstrap_iters: usize,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        Self {
            bootstrap_iters: abduction::analysis::DEFAULT_BOOTSTRAP_ITERS,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub d: usize,
    pub window: usize,
    pub examples: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            d: 4,
            window: 3,
            examples: 4,
            step: 1e-5,
            tolerance: 1e-4,
        }
    }
}

impl RunConfig {
    /// Reads `path` (if any), applies `section.key=value` overrides and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .with_context(|| format!("invalid config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for (key, raw) in overrides {
            set_dotted(&mut table, key, parse_value(raw))?;
        }
        let config: RunConfig = table.try_into().context("invalid configuration")?;
        config.validate()?;
        Ok(config)
    }

    pub fn data_dir(&self) -> &Path {
        self.data.as_deref().unwrap_or(&self.out)
    }

    pub fn world_config(&self) -> WorldConfig {
        let w = &self.world;
        WorldConfig {
            n_symbols: w.n_symbols,
            sparsity: w.sparsity,
            horizon: w.horizon,
            context_len: w.context_len,
            outcome_len: w.outcome_len,
        }
    }

    pub fn thresholds(&self) -> Result<RatingThresholds> {
        let [t5, t4, t3, t2] = self.dataset.thresholds;
        Ok(RatingThresholds::new(t5, t4, t3, t2)?)
    }

    pub fn trainer(&self) -> TrainerConfig {
        let t = &self.train;
        TrainerConfig {
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            block_size: t.block_size,
            initial_prefix: t.initial_prefix,
            lambda: t.lambda,
            beta: t.beta,
            max_len: t.max_len,
            temperature: t.temperature,
            seed: self.seed,
            prefix_loss_masked: t.prefix_loss_masked,
            optimizer: if t.momentum == 0.0 {
                OptimizerKind::Sgd
            } else {
                OptimizerKind::Momentum(t.momentum)
            },
            clip_norm: t.clip_norm,
        }
    }

    pub fn judge_params(&self) -> JudgeParams {
        JudgeParams {
            tau: self.judge.tau,
            tie_eps: self.judge.tie_eps,
        }
    }

    fn validate(&self) -> Result<()> {
        let w = &self.world;
        if w.n_symbols < 3 || !(w.sparsity > 0.0 && w.sparsity <= 1.0) || w.horizon < 1 {
            bail!("world needs n_symbols >= 3, sparsity in (0, 1] and horizon >= 1");
        }
        if w.context_len < 1 || w.outcome_len < 1 {
            bail!("context_len and outcome_len must be >= 1");
        }
        let d = &self.dataset;
        if d.pairs == 0 || d.dev_fraction < 0.0 || d.test_fraction < 0.0 || d.dev_fraction + d.test_fraction >= 1.0 {
            bail!("dataset needs pairs >= 1 and dev + test fractions below 1");
        }
        self.thresholds()?;
        if self.policy.d < 2 || self.policy.window < 1 {
            bail!("policy needs d >= 2 and window >= 1");
        }
        if !(0.0..1.0).contains(&self.train.momentum) {
            bail!("momentum must be in [0, 1)");
        }
        self.trainer().validate()?;
        self.judge_params().validate()?;
        if self.judge.epsilon.is_nan() || self.judge.epsilon < 0.0 {
            bail!("judge.epsilon must be >= 0");
        }
        if self.analyze.bootstrap_iters == 0 {
            bail!("bootstrap_iters must be >= 1");
        }
        let g = &self.gradcheck;
        if g.d < 2 || g.window < 1 || g.examples == 0 || g.step.is_nan() || g.step <= 0.0 || g.tolerance.is_nan() || g.tolerance <= 0.0 {
            bail!("invalid gradcheck settings");
        }
        Ok(())
    }
}

/// TOML scalar if `raw` parses as one, the raw string otherwise.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty());
    let Some(last) = last else {
        bail!("empty override key `{key}`");
    };
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override `{key}`: `{p}` is not a section"),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
