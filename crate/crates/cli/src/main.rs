//! `abduct`: world generation, training, evaluation, analysis and gradient
//! checks from one seeded configuration.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use abduction::analysis;
use abduction::data::{self, Dataset, Sequence, TokenId};
use abduction::eval::{self, SystemOutputs};
use abduction::imitation::{self, AggregatedExample};
use abduction::numerics::{self, Tape};
use abduction::policy::{self, PolicyParams};
use abduction::seed::{self, stream};
use abduction::taskgen::{self, TaskSpec};
use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "abduct", version, about = "Imitation learning for uncommon-outcome explanations on a synthetic world")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a world and train/dev/test splits of uncommon pairs.
    Gen {
        #[arg(long)]
        n_symbols: Option<usize>,
        #[arg(long)]
        sparsity: Option<f64>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Train a policy with one of the imitation methods.
    Train {
        #[arg(value_enum)]
        method: Method,
    },
    /// Judge greedy decodes of checkpoints against expert decodes.
    Eval {
        /// `name=path` or `path`; defaults to every `<out>/<method>/best.ckpt`.
        checkpoints: Vec<String>,
    },
    /// Length, entropy, distance and agreement statistics of a dataset.
    Analyze {
        dataset: PathBuf,
        /// Rating counts per item, one comma-separated row per line.
        #[arg(long)]
        ratings: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients of the losses.
    Gradcheck {
        /// Perturb the analytic gradient before comparing.
        #[arg(long)]
        corrupt_gradient: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Bc,
    Sed,
    Eao,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Bc => "bc",
            Method::Sed => "sed",
            Method::Eao => "eao",
        }
    }
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

type Outcome<T> = std::result::Result<T, Failure>;

trait Classify<T> {
    fn runtime(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for std::result::Result<T, E> {
    fn runtime(self) -> Outcome<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

/// Splits `--section.key=value` overrides from the arguments clap parses.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for arg in args {
        let dotted = arg
            .strip_prefix("--")
            .and_then(|a| a.split_once('='))
            .filter(|(k, _)| k.contains('.'));
        match dotted {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => rest.push(arg),
        }
    }
    (rest, overrides)
}

fn main() -> ExitCode {
    let (args, mut overrides) = split_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(s) = cli.seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    if let Some(o) = &cli.out {
        overrides.push(("out".into(), toml::Value::String(o.display().to_string()).to_string()));
    }
    if let Command::Gen {
        n_symbols,
        sparsity,
        horizon,
    } = &cli.command
    {
        let extra = [
            ("world.n_symbols", n_symbols.map(|v| v.to_string())),
            ("world.sparsity", sparsity.map(|v| format!("{v:?}"))),
            ("world.horizon", horizon.map(|v| v.to_string())),
        ];
        overrides.extend(extra.into_iter().filter_map(|(k, v)| Some((k.to_string(), v?))));
    }
    let result = RunConfig::load(cli.config.as_deref(), &overrides)
        .map_err(Failure::Usage)
        .and_then(|config| run(&cli.command, &config));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: &Command, config: &RunConfig) -> Outcome<()> {
    match command {
        Command::Gen { .. } => cmd_gen(config),
        Command::Train { method } => cmd_train(config, *method),
        Command::Eval { checkpoints } => cmd_eval(config, checkpoints),
        Command::Analyze { dataset, ratings } => cmd_analyze(config, dataset, ratings.as_deref()),
        Command::Gradcheck { corrupt_gradient } => cmd_gradcheck(config, *corrupt_gradient),
    }
}

fn write(path: &Path, contents: &str) -> Outcome<()> {
    fs::write(path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .runtime()
}

fn create_dir(path: &Path) -> Outcome<()> {
    fs::create_dir_all(path)
        .with_context(|| format!("cannot create {}", path.display()))
        .runtime()
}

fn load_world(config: &RunConfig) -> Outcome<TaskSpec> {
    TaskSpec::load(config.data_dir().join("world.txt")).runtime()
}

fn load_split(config: &RunConfig, spec: &TaskSpec, name: &str) -> Outcome<Dataset> {
    data::load_dataset(config.data_dir().join(format!("{name}.jsonl")), &spec.vocab()).runtime()
}

fn cmd_gen(config: &RunConfig) -> Outcome<()> {
    let th = config.thresholds().map_err(Failure::Usage)?;
    let spec = taskgen::generate_world(config.seed, &config.world_config()).map_err(|e| Failure::Usage(e.into()))?;
    let pairs = taskgen::uncommon_pairs(&spec, config.dataset.pairs, config.seed, &th).runtime()?;
    let kept = taskgen::filter_common(&pairs, &spec, &th);
    let d = &config.dataset;
    let fractions = (1.0 - d.dev_fraction - d.test_fraction, d.dev_fraction, d.test_fraction);
    let (train, dev, test) = data::split_dataset(&kept, fractions, config.seed).runtime()?;
    let (train, degenerate) = taskgen::with_expert_explanations(&spec, &train, config.seed, config.train.max_len);

    create_dir(&config.out)?;
    write(&config.out.join("world.txt"), &spec.to_text())?;
    let vocab = spec.vocab();
    let mut histogram = [0usize; 5];
    for (name, ds) in [("train", &train), ("dev", &dev), ("test", &test)] {
        let text = data::render_dataset(ds, &vocab).runtime()?;
        write(&config.out.join(format!("{name}.jsonl")), &text)?;
        for ex in data::parse_dataset(&text, &vocab).runtime()?.iter() {
            let scale = ex.likelihood_scale.ok_or_else(|| Failure::Runtime(anyhow!("unrated example")))?;
            histogram[scale as usize - 1] += 1;
        }
    }
    let total: usize = histogram.iter().sum();
    let mut table = String::from("scale,count,fraction\n");
    for (i, c) in histogram.iter().enumerate() {
        let frac = if total == 0 { 0.0 } else { *c as f64 / total as f64 };
        table.push_str(&format!("{},{c},{frac:.4}\n", i + 1));
    }
    write(&config.out.join("scales.csv"), &table)?;
    print!("{table}");
    eprintln!(
        "wrote {} train, {} dev, {} test examples to {} ({degenerate} fallback explanations)",
        train.len(),
        dev.len(),
        test.len(),
        config.out.display()
    );
    Ok(())
}

fn cmd_train(config: &RunConfig, method: Method) -> Outcome<()> {
    let spec = load_world(config)?;
    let train = load_split(config, &spec, "train")?;
    let dev = load_split(config, &spec, "dev")?;
    let trainer = config.trainer();
    let init = policy::init_params(
        seed::derive(config.seed, &[stream::INIT]),
        spec.vocab_size(),
        config.policy.d,
        config.policy.window,
    )
    .map_err(|e| Failure::Usage(e.into()))?;
    let max_len = trainer.max_len;
    let metric = |p: &PolicyParams| eval::dev_metric(&spec, p, &dev, max_len);
    let outcome = match method {
        Method::Bc => imitation::train_bc(&trainer, &init, &train, &metric),
        Method::Sed => imitation::train_sed(&trainer, &init, &train, &metric),
        Method::Eao => imitation::train_eao(&trainer, &init, &train, &spec, &metric),
    }
    .with_context(|| format!("{} training failed", method.name()))
    .runtime()?;

    let dir = config.out.join(method.name());
    create_dir(&dir)?;
    write(&dir.join("init.ckpt"), &init.to_text())?;
    for rec in &outcome.history {
        write(&dir.join(format!("epoch_{}.ckpt", rec.epoch)), &rec.params.to_text())?;
    }
    write(&dir.join("best.ckpt"), &outcome.best.to_text())?;
    let history = imitation::render_history(&outcome.history);
    write(&dir.join("history.csv"), &history)?;
    print!("{history}");
    let best = &outcome.history[outcome.best_epoch - 1];
    eprintln!(
        "{}: best epoch {} (dev metric {:.6}), checkpoints in {}",
        method.name(),
        best.epoch,
        best.dev_metric,
        dir.display()
    );
    Ok(())
}

fn checkpoint_list(config: &RunConfig, args: &[String]) -> Outcome<Vec<(String, PathBuf)>> {
    if args.is_empty() {
        let found: Vec<_> = ["bc", "sed", "eao"]
            .iter()
            .map(|m| (m.to_string(), config.out.join(m).join("best.ckpt")))
            .filter(|(_, p)| p.exists())
            .collect();
        if found.is_empty() {
            return Err(Failure::Runtime(anyhow!(
                "no checkpoints given and none found under {}",
                config.out.display()
            )));
        }
        return Ok(found);
    }
    Ok(args
        .iter()
        .map(|a| match a.split_once('=') {
            Some((name, path)) => (name.to_string(), PathBuf::from(path)),
            None => {
                let p = PathBuf::from(a);
                let name = p
                    .parent()
                    .and_then(Path::file_name)
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| a.clone());
                (name, p)
            }
        })
        .collect())
}

fn cmd_eval(config: &RunConfig, args: &[String]) -> Outcome<()> {
    let spec = load_world(config)?;
    let test = load_split(config, &spec, "test")?;
    let max_len = config.train.max_len;
    let mut systems = vec![SystemOutputs {
        name: "expert".into(),
        outputs: eval::expert_decodes(&spec, &test, max_len),
    }];
    for (name, path) in checkpoint_list(config, args)? {
        let params = PolicyParams::load(&path).runtime()?;
        if params.vocab_size != spec.vocab_size() {
            return Err(Failure::Runtime(anyhow!(
                "checkpoint {} has vocabulary size {} but the world has {}",
                path.display(),
                params.vocab_size,
                spec.vocab_size()
            )));
        }
        systems.push(SystemOutputs {
            name,
            outputs: eval::decode_all(&params, &test, max_len).runtime()?,
        });
    }
    let rows = eval::evaluate_systems(&test, &systems, "expert", &spec, &config.judge_params()).runtime()?;
    create_dir(&config.out)?;
    let report = eval::render_report(&rows);
    write(&config.out.join("report.csv"), &report)?;
    write(&config.out.join("report_pct.csv"), &eval::render_percentages(&rows))?;
    let mut checks = String::from("system,relevant,plausible,total\n");
    for s in &systems {
        let (mut relevant, mut plausible) = (0, 0);
        for (ex, z) in test.iter().zip(&s.outputs) {
            relevant += usize::from(taskgen::relevance_check(&spec, &ex.x, &ex.y, z, config.judge.epsilon));
            plausible += usize::from(eval::is_plausible(&eval::judge(&spec, &ex.x, &ex.y, z)));
        }
        checks.push_str(&format!("{},{relevant},{plausible},{}\n", s.name, test.len()));
    }
    write(&config.out.join("relevance.csv"), &checks)?;
    print!("{report}");
    Ok(())
}

fn read_ratings(path: &Path) -> Outcome<Vec<Vec<usize>>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .runtime()?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            line.split(',')
                .map(|c| c.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .with_context(|| format!("{}: bad rating row {}", path.display(), i + 1))
        })
        .collect::<anyhow::Result<_>>()
        .runtime()
}

fn cmd_analyze(config: &RunConfig, dataset: &Path, ratings: Option<&Path>) -> Outcome<()> {
    let text = fs::read_to_string(dataset)
        .with_context(|| format!("cannot read {}", dataset.display()))
        .runtime()?;
    let vocab = data::infer_vocab(&text).runtime()?;
    let ds = data::parse_dataset(&text, &vocab).runtime()?;
    let mut groups: Vec<Vec<Sequence>> = Vec::new();
    let mut index: BTreeMap<(Vec<TokenId>, Vec<TokenId>), usize> = BTreeMap::new();
    for ex in ds.iter() {
        let Some(z) = &ex.z else { continue };
        let key = (ex.x.to_vec(), ex.y.to_vec());
        let g = *index.entry(key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(z.clone());
    }
    if groups.is_empty() {
        return Err(Failure::Runtime(anyhow!("{} has no explanations", dataset.display())));
    }
    let ratings = ratings.map(read_ratings).transpose()?;
    let report = analysis::diversity_report(
        &groups,
        config.analyze.bootstrap_iters,
        config.seed,
        ratings.as_deref(),
    )
    .runtime()?;
    create_dir(&config.out)?;
    let table = analysis::render_table(&report);
    write(&config.out.join("analysis.csv"), &table)?;
    write(&config.out.join("analysis.json"), &analysis::render_record(&report))?;
    print!("{table}");
    Ok(())
}

fn cmd_gradcheck(config: &RunConfig, corrupt: bool) -> Outcome<()> {
    let g = &config.gradcheck;
    let th = config.thresholds().map_err(Failure::Usage)?;
    let spec = taskgen::generate_world(config.seed, &config.world_config()).map_err(|e| Failure::Usage(e.into()))?;
    let max_len = config.train.max_len;
    let mut pairs = Vec::with_capacity(g.examples);
    for i in 0..g.examples {
        let s = seed::derive(config.seed, &[stream::GRADCHECK, i as u64]);
        let co = taskgen::sample_context_outcome(&spec, s, false, &th).runtime()?;
        pairs.push(data::Example::new(co.x, co.y).runtime()?);
    }
    let (batch, _) = taskgen::with_expert_explanations(&spec, &Dataset::new(pairs), config.seed, max_len);
    let init_seed = seed::derive(config.seed, &[stream::GRADCHECK]);
    let params = policy::init_params(init_seed, spec.vocab_size(), g.d, g.window).map_err(|e| Failure::Usage(e.into()))?;
    let params0 = policy::init_params(seed::derive(init_seed, &[0]), spec.vocab_size(), g.d, g.window).runtime()?;
    let aggregated = batch
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let s = seed::derive(config.seed, &[stream::LEARNER, 0, i as u64]);
            Ok(AggregatedExample {
                x: ex.x.clone(),
                y: ex.y.clone(),
                z: ex.z.clone().unwrap_or_default(),
                z_tilde: Some(policy::sample_sequence(&params, &ex.x, &ex.y, s, max_len, 1.0)?),
                prefix_len: 0,
            })
        })
        .collect::<abduction::Result<Vec<_>>>()
        .runtime()?;

    let check = |loss: &dyn Fn(&mut Tape) -> abduction::Result<numerics::Var>| -> abduction::Result<f64> {
        let (_, mut analytic) = numerics::grad(loss, &params.set)?;
        if corrupt {
            let i = analytic.len() / 2;
            analytic.set(i, analytic.get(i) * 1.5 + 1e-3);
        }
        numerics::finite_diff_check_against(loss, &params.set, &analytic, g.step)
    };
    let bc = check(&|t: &mut Tape| imitation::bc_loss_on(t, &params, &batch.examples)).runtime()?;
    let (lambda, beta) = (config.train.lambda, config.train.beta);
    let sed = check(&|t: &mut Tape| imitation::sed_loss_on(t, &params, &params0, &aggregated, lambda, beta)).runtime()?;
    let pass = bc <= g.tolerance && sed <= g.tolerance;
    println!(
        "gradcheck params={} bc_max_rel_err={bc:.3e} sed_max_rel_err={sed:.3e} tolerance={:e} status={}",
        params.param_count(),
        g.tolerance,
        if pass { "pass" } else { "fail" }
    );
    if pass {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow!("gradient check exceeded tolerance")))
    }
}
