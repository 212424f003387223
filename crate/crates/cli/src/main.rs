//! `cascade`: simulate, sweep, analyze and tune model cascades from
//! prediction dumps.

mod commands;
mod config;
mod failure;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use cascade_core::engine::Mode;
use cascade_core::Policy;
use clap::{Args, Parser, Subcommand};

use crate::config::{RunConfig, SynthConfig};
use crate::failure::Failure;

#[derive(Debug, Parser)]
#[command(
    name = "cascade",
    version,
    about = "Model cascade simulator over precomputed predictions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and validate a bundle, then report per-model accuracy and cost.
    Validate {
        #[command(flatten)]
        input: InputArgs,
    },
    /// Run the cascade once at fixed thresholds.
    Simulate {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        cascade: CascadeArgs,
        #[command(flatten)]
        thresholds: ThresholdArgs,
    },
    /// Sweep a threshold grid and report the accuracy-cost curve.
    Sweep {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        cascade: CascadeArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Break a run down by answering model. Without thresholds, analyzes the
    /// cheapest frontier point that matches the largest model's accuracy.
    Analyze {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        cascade: CascadeArgs,
        #[command(flatten)]
        thresholds: ThresholdArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Pick the most accurate thresholds whose validation cost fits a budget.
    Tune {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        cascade: CascadeArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Mean FLOPs per instance allowed on the validation bundle.
        #[arg(long)]
        budget: Option<f64>,
        /// Bundle directory to replay the chosen thresholds on.
        #[arg(long)]
        test_bundle: Option<PathBuf>,
    },
    /// Write a synthetic bundle.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Render accuracy-cost curves for one or more policies as SVG.
    Plot {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        cascade: CascadeArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Policies to draw, comma separated.
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<Policy>>,
    },
    /// Repeat a previous run from its manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, env = "CASCADE_OUT_DIR")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "CASCADE_OUT_DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InputArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory holding instances.jsonl, profiles.toml and preds_<model>.jsonl.
    #[arg(long, conflicts_with_all = ["instances", "preds", "profiles"])]
    bundle: Option<PathBuf>,
    #[arg(long)]
    instances: Option<PathBuf>,
    /// Prediction files, cheapest model first.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    preds: Option<Vec<PathBuf>>,
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Restrict the cascade to these models, cheapest first.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    /// Look up costs at each instance's own length.
    #[arg(long)]
    per_instance_cost: bool,
}

#[derive(Debug, Args)]
struct CascadeArgs {
    #[arg(long)]
    policy: Option<Policy>,
    #[arg(long)]
    mode: Option<Mode>,
    /// Seed for the random policy.
    #[arg(long)]
    seed: Option<u64>,
    /// Heuristic policy: longer inputs are more confident.
    #[arg(long)]
    heuristic_invert: bool,
    /// Heuristic policy: normalizing length (default: longest input).
    #[arg(long)]
    heuristic_max_length: Option<u32>,
}

#[derive(Debug, Args)]
struct ThresholdArgs {
    /// Output threshold per non-final stage, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    thresholds: Option<Vec<f64>>,
    /// Routing skip threshold per non-final stage, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    bands: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Thresholds per stage, including both endpoints.
    #[arg(long)]
    grid_points: Option<usize>,
    /// Refuse sweeps with more configurations than this.
    #[arg(long)]
    grid_cap: Option<usize>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    labels: Option<usize>,
    /// BERT sizes (mini, medium, base, large), cheapest first.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
    /// Target accuracy per model in (0, 1].
    #[arg(long, value_delimiter = ',')]
    targets: Option<Vec<f64>>,
    #[arg(long)]
    sharpness: Option<f64>,
    #[arg(long)]
    churn: Option<f64>,
    #[arg(long)]
    seq_len: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
}

impl InputArgs {
    fn apply(&self, c: &mut RunConfig) {
        if self.bundle.is_some() {
            c.bundle = self.bundle.clone();
            c.instances = None;
            c.predictions = None;
            c.profiles = None;
        }
        if self.instances.is_some() || self.preds.is_some() || self.profiles.is_some() {
            c.bundle = None;
            c.instances = self.instances.clone().or(c.instances.take());
            c.predictions = self.preds.clone().or(c.predictions.take());
            c.profiles = self.profiles.clone().or(c.profiles.take());
        }
        set(&mut c.models, &self.models);
        if self.per_instance_cost {
            c.per_instance_cost = Some(true);
        }
    }
}

impl CascadeArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.policy, &self.policy);
        set(&mut c.mode, &self.mode);
        set(&mut c.seed, &self.seed);
        set(&mut c.heuristic_max_length, &self.heuristic_max_length);
        if self.heuristic_invert {
            c.heuristic_invert = Some(true);
        }
    }
}

impl ThresholdArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.thresholds, &self.thresholds);
        set(&mut c.bands, &self.bands);
    }
}

impl GridArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.grid_points, &self.grid_points);
        set(&mut c.grid_cap, &self.grid_cap);
    }
}

impl SynthArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.seed, &self.seed);
        let flags = SynthConfig {
            n: self.n,
            labels: self.labels,
            variants: self.variants.clone(),
            targets: self.targets.clone(),
            sharpness: self.sharpness,
            churn: self.churn,
            seq_len: self.seq_len,
        };
        let base = std::mem::take(c);
        *c = base.overlay(RunConfig {
            synth: Some(flags),
            ..Default::default()
        });
    }
}

fn set<T: Clone>(slot: &mut Option<T>, flag: &Option<T>) {
    if flag.is_some() {
        slot.clone_from(flag);
    }
}

fn load_config(common: &CommonArgs) -> Result<RunConfig, Failure> {
    match &common.config {
        Some(path) => RunConfig::from_file(path),
        None => Ok(RunConfig::default()),
    }
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| PathBuf::from("cascade-out"))
}

fn dispatch(command: Command) -> Result<(), Failure> {
    use commands::Kind;
    let (kind, common, config) = match command {
        Command::Rerun { manifest, out } => return commands::rerun(&manifest, &out_dir(out)),
        Command::Validate { input } => {
            let mut c = load_config(&input.common)?;
            input.apply(&mut c);
            (Kind::Validate, input.common, c)
        }
        Command::Simulate {
            input,
            cascade,
            thresholds,
        } => {
            let mut c = load_config(&input.common)?;
            input.apply(&mut c);
            cascade.apply(&mut c);
            thresholds.apply(&mut c);
            (Kind::Simulate, input.common, c)
        }
        Command::Sweep {
            input,
            cascade,
            grid,
        } => {
            let mut c = load_config(&input.common)?;
            input.apply(&mut c);
            cascade.apply(&mut c);
            grid.apply(&mut c);
            (Kind::Sweep, input.common, c)
        }
        Command::Analyze {
            input,
            cascade,
            thresholds,
            grid,
        } => {
            let mut c = load_config(&input.common)?;
            input.apply(&mut c);
            cascade.apply(&mut c);
            thresholds.apply(&mut c);
            grid.apply(&mut c);
            (Kind::Analyze, input.common, c)
        }
        Command::Tune {
            input,
            cascade,
            grid,
            budget,
            test_bundle,
        } => {
            let mut c = load_config(&input.common)?;
            input.apply(&mut c);
            cascade.apply(&mut c);
            grid.apply(&mut c);
            set(&mut c.budget, &budget);
            set(&mut c.test_bundle, &test_bundle);
            (Kind::Tune, input.common, c)
        }
        Command::Synth { common, synth } => {
            let mut c = load_config(&common)?;
            synth.apply(&mut c);
            (Kind::Synth, common, c)
        }
        Command::Plot {
            input,
            cascade,
            grid,
            policies,
        } => {
            let mut c = load_config(&input.common)?;
            input.apply(&mut c);
            cascade.apply(&mut c);
            grid.apply(&mut c);
            set(&mut c.policies, &policies);
            (Kind::Plot, input.common, c)
        }
    };
    commands::execute(kind, &config, &out_dir(common.out))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
