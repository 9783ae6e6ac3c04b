use std::path::PathBuf;
use std::process::ExitCode;

use bayes_actor::actor::{CostFamily, PriorRegime};
use bayes_actor::inference::LatentStrategy;
use bayes_actor_cli::error::exit;
use bayes_actor_cli::{run, CliError, Command, ExperimentSpec, Result, Solver};
use clap::{Args, Parser, Subcommand};

/// Bayesian actor models: simulate, train, evaluate, infer, recover, identifiability.
///
/// Settings come from built-in defaults, then `--config <toml>` (keys as in
/// the README), then flags. Outputs go to `--out` with one
/// `<file>.provenance.json` per file.
#[derive(Parser)]
#[command(name = "bayes-actor", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a stimulus-response dataset.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        design: Design,
        #[command(flatten)]
        model: Model,
    },
    /// Train an amortizer network.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
    },
    /// Report the action fidelity of a network or of the closed form.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        eval_set: Option<PathBuf>,
        #[arg(long)]
        eval_size: Option<usize>,
    },
    /// Sample the posterior of a dataset.
    Infer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: Model,
        #[command(flatten)]
        sampler: Sampler,
        /// Dataset CSV with header `stimulus,response`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Parameter recovery over simulated replications.
    Recover {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        design: Design,
        #[command(flatten)]
        model: Model,
        #[command(flatten)]
        sampler: Sampler,
    },
    /// Correlation of a parameter pair and the effect of fixing either one.
    Identifiability {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        design: Design,
        #[command(flatten)]
        model: Model,
        #[command(flatten)]
        sampler: Sampler,
        /// Pair such as `mu0,beta`.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        pair: Option<Vec<String>>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML file with ExperimentSpec keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// quadratic | quadratic_with_effort | asymmetric_quadratic
    #[arg(long)]
    family: Option<CostFamily>,
    /// Exit with code 3 if any warning is raised (outputs are still written).
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct Design {
    #[arg(long)]
    n_trials: Option<usize>,
    #[arg(long)]
    replications: Option<usize>,
    /// training | inference | evaluation
    #[arg(long)]
    regime: Option<PriorRegime>,
    /// Ground-truth values, e.g. `mu0=1.5,sigma=0.2`.
    #[arg(long, value_delimiter = ',')]
    truth: Vec<String>,
    /// Stimuli cycled through by the trials.
    #[arg(long, value_delimiter = ',')]
    stimuli: Vec<f64>,
    /// Parameters fixed at their true values in recovery and identifiability studies.
    #[arg(long, value_delimiter = ',')]
    fixed: Vec<String>,
    /// auto | closed_form | network | oracle
    #[arg(long)]
    solver: Option<Solver>,
}

#[derive(Args)]
struct Model {
    /// Network checkpoint JSON.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Use the closed-form action instead of a network.
    #[arg(long)]
    analytical: bool,
}

#[derive(Args)]
struct Sampler {
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    target_accept: Option<f64>,
    #[arg(long)]
    max_tree_depth: Option<usize>,
    /// joint | joint_centered | joint_conditional | mode
    #[arg(long)]
    strategy: Option<LatentStrategy>,
    /// Parameters fixed at given values, e.g. `sigma=0.2`.
    #[arg(long, value_delimiter = ',')]
    fix: Vec<String>,
}

#[derive(Args)]
struct Training {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Consecutive checkpoints below the target before stopping; 0 disables.
    #[arg(long)]
    early_stop_patience: Option<usize>,
    #[arg(long)]
    eval_set: Option<PathBuf>,
    #[arg(long)]
    eval_size: Option<usize>,
    /// Keep wall-clock seconds in the training report.
    #[arg(long)]
    timing: bool,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn assignments(items: &[String]) -> Result<Vec<(String, f64)>> {
    items
        .iter()
        .map(|item| {
            let (k, v) =
                item.split_once('=').ok_or_else(|| CliError::Input(format!("expected name=value, got `{item}`")))?;
            let v = v.trim().parse().map_err(|_| CliError::Input(format!("`{v}` is not a number")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

impl Common {
    fn base(&self) -> Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(path) => ExperimentSpec::from_toml_file(path)?,
            None => ExperimentSpec::default(),
        };
        set(&mut spec.seed, self.seed);
        set(&mut spec.family, self.family);
        spec.strict |= self.strict;
        Ok(spec)
    }
}

impl Design {
    fn apply(&self, spec: &mut ExperimentSpec) -> Result<()> {
        set(&mut spec.n_trials, self.n_trials);
        set(&mut spec.replications, self.replications);
        set(&mut spec.regime, self.regime);
        set(&mut spec.solver, self.solver);
        spec.truth.extend(assignments(&self.truth)?);
        if !self.stimuli.is_empty() {
            spec.stimuli = self.stimuli.clone();
        }
        if !self.fixed.is_empty() {
            spec.fixed = self.fixed.clone();
        }
        Ok(())
    }
}

impl Model {
    fn apply(&self, spec: &mut ExperimentSpec) {
        if self.network.is_some() {
            spec.network = self.network.clone();
        }
        spec.analytical |= self.analytical;
    }
}

impl Sampler {
    fn apply(&self, spec: &mut ExperimentSpec) -> Result<()> {
        let s = &mut spec.sampler;
        set(&mut s.n_chains, self.chains);
        set(&mut s.n_warmup, self.warmup);
        set(&mut s.n_samples, self.samples);
        set(&mut s.target_accept, self.target_accept);
        set(&mut s.max_tree_depth, self.max_tree_depth);
        set(&mut spec.strategy, self.strategy);
        spec.fix.extend(assignments(&self.fix)?);
        Ok(())
    }
}

impl Training {
    fn apply(&self, spec: &mut ExperimentSpec) {
        let t = &mut spec.training;
        set(&mut t.total_steps, self.steps);
        set(&mut t.learning_rate, self.learning_rate);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.mc_samples, self.mc_samples);
        set(&mut t.eval_every, self.eval_every);
        set(&mut t.early_stop_patience, self.early_stop_patience);
        if self.eval_set.is_some() {
            spec.eval_set = self.eval_set.clone();
        }
        set(&mut spec.eval_size, self.eval_size);
        spec.timing |= self.timing;
    }
}

fn resolve(cmd: Cmd) -> Result<(Command, ExperimentSpec, PathBuf)> {
    Ok(match cmd {
        Cmd::Simulate { common, design, model } => {
            let mut spec = common.base()?;
            design.apply(&mut spec)?;
            model.apply(&mut spec);
            (Command::Simulate, spec, common.out)
        }
        Cmd::Train { common, training } => {
            let mut spec = common.base()?;
            training.apply(&mut spec);
            (Command::Train, spec, common.out)
        }
        Cmd::Evaluate { common, model, eval_set, eval_size } => {
            let mut spec = common.base()?;
            model.apply(&mut spec);
            if eval_set.is_some() {
                spec.eval_set = eval_set;
            }
            set(&mut spec.eval_size, eval_size);
            (Command::Evaluate, spec, common.out)
        }
        Cmd::Infer { common, model, sampler, data } => {
            let mut spec = common.base()?;
            model.apply(&mut spec);
            sampler.apply(&mut spec)?;
            spec.data = Some(data);
            (Command::Infer, spec, common.out)
        }
        Cmd::Recover { common, design, model, sampler } => {
            let mut spec = common.base()?;
            design.apply(&mut spec)?;
            model.apply(&mut spec);
            sampler.apply(&mut spec)?;
            (Command::Recover, spec, common.out)
        }
        Cmd::Identifiability { common, design, model, sampler, pair } => {
            let mut spec = common.base()?;
            design.apply(&mut spec)?;
            model.apply(&mut spec);
            sampler.apply(&mut spec)?;
            if let Some(p) = pair {
                spec.pair = Some((p[0].clone(), p[1].clone()));
            }
            (Command::Identifiability, spec, common.out)
        }
    })
}

fn main_inner() -> Result<()> {
    let (command, spec, out) = resolve(Cli::parse().command)?;
    let artifacts = run(command, &spec)?;
    for w in &artifacts.warnings {
        eprintln!("warning: {w}");
    }
    for path in artifacts.write(&out)? {
        println!("{}", path.display());
    }
    if spec.strict && !artifacts.warnings.is_empty() {
        return Err(CliError::Warnings(artifacts.warnings.len()));
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
