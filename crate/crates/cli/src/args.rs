//! Command-line flags, the optional TOML config file, and their merge.
//!
//! Every flag has a config-file key with the same kebab-case name. Flags
//! given on the command line win over the file; the file wins over defaults.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use fairflow_core::experiment::SweepEntry;
use fairflow_core::scenarios::ScenarioKind;
use fairflow_core::{Strategy, TrainConfig};
use serde::{Deserialize, Serialize};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_OUT: &str = "out";

#[derive(Debug, Parser)]
#[command(name = "fairflow", version, about = "Train, evaluate and compare fairness strategies for RL congestion control")]
pub struct Cli {
    /// Master seed for training and evaluation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// TOML file whose keys mirror the long flag names.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one policy and write its checkpoint and learning curve.
    Train(TrainArgs),
    /// Run one evaluation scenario and write JSON and CSV reports.
    Eval(EvalArgs),
    /// Train (or reuse cached) strategy variants and tabulate duel fairness.
    Sweep(SweepArgs),
    /// Write plot-ready per-MI throughput series for one episode.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Sweep(_) => "sweep",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// base, a, b or c.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Total environment steps.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Fair-share penalty weight (strategy a only).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Loss coefficient (strategy c only).
    #[arg(long = "loss-coef")]
    pub loss_coef: Option<f64>,
    /// Frozen background checkpoint (strategies a and b only).
    #[arg(long)]
    pub baseline: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// single, duel, cubic or dynamic.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Ego controller: a checkpoint path or `cubic`.
    #[arg(long)]
    pub ego: Option<String>,
    /// Background controller for the duel: a checkpoint path or `cubic`.
    #[arg(long)]
    pub bg: Option<String>,
    /// Evaluation episodes.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// MIs the background runs alone before the ego joins.
    #[arg(long)]
    pub stagger: Option<usize>,
    /// MIs per episode.
    #[arg(long = "episode-len")]
    pub episode_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// a, b, c or all.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Frozen baseline checkpoint; trained (or taken from the cache) when absent.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Total environment steps per trained variant.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Duel episodes per sweep row.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// MIs the background runs alone before the ego joins.
    #[arg(long)]
    pub stagger: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// single, duel or dynamic.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Ego controller: a checkpoint path or `cubic`.
    #[arg(long)]
    pub ego: Option<String>,
    /// Background controller for the duel: a checkpoint path or `cubic`.
    #[arg(long)]
    pub bg: Option<String>,
    /// Duel episode index to replay.
    #[arg(long)]
    pub episode: Option<usize>,
    /// MIs the background runs alone before the ego joins.
    #[arg(long)]
    pub stagger: Option<usize>,
    /// MIs per episode.
    #[arg(long = "episode-len")]
    pub episode_len: Option<usize>,
}

/// Contents of `--config`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub strategy: Option<String>,
    pub steps: Option<u64>,
    pub lambda: Option<f64>,
    pub loss_coef: Option<f64>,
    pub baseline: Option<PathBuf>,
    pub scenario: Option<String>,
    pub ego: Option<String>,
    pub bg: Option<String>,
    pub episodes: Option<usize>,
    pub stagger: Option<usize>,
    pub episode_len: Option<usize>,
    pub episode: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// A flag combination that makes no sense; reported with usage text.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Globals {
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: Option<usize>,
}

impl Globals {
    pub fn resolve(cli: &Cli, file: &FileConfig) -> Result<Self> {
        let jobs = cli.jobs.or(file.jobs);
        if jobs == Some(0) {
            return Err(usage("--jobs must be at least 1"));
        }
        Ok(Self {
            seed: cli.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            out: cli.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            jobs,
        })
    }
}

/// A controller named on the command line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerSpec {
    Cubic,
    Checkpoint(PathBuf),
}

impl FromStr for ControllerSpec {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(if s.eq_ignore_ascii_case("cubic") { ControllerSpec::Cubic } else { ControllerSpec::Checkpoint(s.into()) })
    }
}

fn parse_strategy(s: &str) -> Result<Strategy> {
    Strategy::from_str(s).map_err(|e| usage(e.to_string()))
}

pub fn parse_scenario(s: &str) -> Result<ScenarioKind> {
    match s.to_ascii_lowercase().as_str() {
        "single" => Ok(ScenarioKind::Single),
        "duel" => Ok(ScenarioKind::Duel),
        "cubic" => Ok(ScenarioKind::Cubic),
        "dynamic" => Ok(ScenarioKind::Dynamic),
        other => Err(usage(format!("unknown scenario {other:?} (expected single, duel, cubic or dynamic)"))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainPlan {
    pub config: TrainConfig,
    pub baseline: Option<PathBuf>,
}

impl TrainPlan {
    pub fn resolve(args: &TrainArgs, file: &FileConfig, globals: &Globals) -> Result<Self> {
        let name = args.strategy.as_ref().or(file.strategy.as_ref()).ok_or_else(|| usage("--strategy is required"))?;
        let strategy = parse_strategy(name)?;
        let lambda = args.lambda.or(file.lambda);
        let loss_coef = args.loss_coef.or(file.loss_coef);
        let baseline = args.baseline.clone().or_else(|| file.baseline.clone());
        if lambda.is_some() && strategy != Strategy::A {
            return Err(usage(format!("--lambda only applies to strategy a, not {strategy}")));
        }
        if loss_coef.is_some() && strategy != Strategy::C {
            return Err(usage(format!("--loss-coef only applies to strategy c, not {strategy}")));
        }
        if strategy.needs_background() && baseline.is_none() {
            return Err(usage(format!("strategy {strategy} trains against a frozen baseline; pass --baseline")));
        }
        if !strategy.needs_background() && baseline.is_some() {
            return Err(usage(format!("--baseline only applies to strategies a and b, not {strategy}")));
        }
        let mut config = TrainConfig { seed: globals.seed, ..TrainConfig::for_strategy(strategy) };
        if let Some(steps) = args.steps.or(file.steps) {
            config.total_steps = steps;
        }
        if let Some(l) = lambda {
            config.lambda = l;
        }
        if let Some(c) = loss_coef {
            config.loss_coef = c;
        }
        config.validate().map_err(|e| usage(e.to_string()))?;
        Ok(Self { config, baseline })
    }

    /// File stem shared by the checkpoint and its curve.
    pub fn stem(&self) -> String {
        artifact_stem(&self.config)
    }
}

/// `base`, `a-lambda-2`, `b`, `c-loss-8000`.
pub fn artifact_stem(cfg: &TrainConfig) -> String {
    match cfg.strategy {
        Strategy::A => format!("a-lambda-{}", cfg.lambda),
        Strategy::C => format!("c-loss-{}", cfg.loss_coef),
        s => s.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPlan {
    pub scenario: ScenarioKind,
    pub ego: ControllerSpec,
    pub bg: Option<ControllerSpec>,
    pub episodes: usize,
    pub stagger: usize,
    pub episode_len: usize,
}

impl EvalPlan {
    pub fn resolve(args: &EvalArgs, file: &FileConfig) -> Result<Self> {
        let scenario = args.scenario.as_ref().or(file.scenario.as_ref()).ok_or_else(|| usage("--scenario is required"))?;
        let scenario = parse_scenario(scenario)?;
        let ego = args.ego.as_ref().or(file.ego.as_ref()).ok_or_else(|| usage("--ego is required"))?;
        let bg = args.bg.as_ref().or(file.bg.as_ref());
        let bg = match (scenario, bg) {
            (ScenarioKind::Duel, None) => return Err(usage("the duel scenario needs --bg")),
            (ScenarioKind::Duel, Some(b)) => Some(b.parse().expect("infallible")),
            (_, Some(_)) => return Err(usage("--bg only applies to the duel scenario")),
            (_, None) => None,
        };
        let stagger_default = if scenario == ScenarioKind::Duel { 50 } else { 0 };
        let plan = Self {
            scenario,
            ego: ego.parse().expect("infallible"),
            bg,
            episodes: args.episodes.or(file.episodes).unwrap_or(50),
            stagger: args.stagger.or(file.stagger).unwrap_or(stagger_default),
            episode_len: args.episode_len.or(file.episode_len).unwrap_or(400),
        };
        if scenario == ScenarioKind::Single && (plan.stagger != 0 || args.episodes.or(file.episodes).is_some()) {
            return Err(usage("the single-flow trace takes no --episodes or --stagger"));
        }
        if scenario == ScenarioKind::Dynamic && plan.stagger != 0 {
            return Err(usage("the dynamic trace takes no --stagger"));
        }
        if plan.episodes == 0 {
            return Err(usage("--episodes must be at least 1"));
        }
        if plan.stagger >= plan.episode_len {
            return Err(usage("--stagger must be shorter than --episode-len"));
        }
        Ok(plan)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPlan {
    pub entries: Vec<SweepEntry>,
    pub baseline: Option<PathBuf>,
    pub template: TrainConfig,
    pub episodes: usize,
    pub stagger: usize,
}

impl SweepPlan {
    pub fn resolve(args: &SweepArgs, file: &FileConfig, globals: &Globals) -> Result<Self> {
        if file.lambda.is_some() || file.loss_coef.is_some() {
            return Err(usage("sweeps use fixed grids; remove lambda and loss-coef from the config"));
        }
        let which = args.strategy.as_ref().or(file.strategy.as_ref()).map_or("all", String::as_str);
        let entries = match which.to_ascii_lowercase().as_str() {
            "a" => SweepEntry::a_grid(),
            "b" => SweepEntry::b_grid(),
            "c" => SweepEntry::c_grid(),
            "all" => [SweepEntry::a_grid(), SweepEntry::b_grid(), SweepEntry::c_grid()].concat(),
            other => return Err(usage(format!("unknown sweep strategy {other:?} (expected a, b, c or all)"))),
        };
        let mut template = TrainConfig { seed: globals.seed, ..TrainConfig::default() };
        if let Some(steps) = args.steps.or(file.steps) {
            template.total_steps = steps;
        }
        template.validate().map_err(|e| usage(e.to_string()))?;
        let episodes = args.episodes.or(file.episodes).unwrap_or(50);
        let stagger = args.stagger.or(file.stagger).unwrap_or(50);
        if episodes == 0 {
            return Err(usage("--episodes must be at least 1"));
        }
        if stagger >= template.episode_len {
            return Err(usage("--stagger must be shorter than the episode"));
        }
        Ok(Self { entries, baseline: args.baseline.clone().or_else(|| file.baseline.clone()), template, episodes, stagger })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportPlan {
    pub scenario: ScenarioKind,
    pub ego: ControllerSpec,
    pub bg: Option<ControllerSpec>,
    pub episode: usize,
    pub stagger: usize,
    pub episode_len: usize,
}

impl ReportPlan {
    pub fn resolve(args: &ReportArgs, file: &FileConfig) -> Result<Self> {
        let scenario = args.scenario.as_ref().or(file.scenario.as_ref()).ok_or_else(|| usage("--scenario is required"))?;
        let scenario = parse_scenario(scenario)?;
        if scenario == ScenarioKind::Cubic {
            return Err(usage("report supports single, duel and dynamic"));
        }
        let eval = EvalArgs {
            scenario: Some(format!("{scenario:?}").to_lowercase()),
            ego: args.ego.clone(),
            bg: args.bg.clone(),
            episodes: None,
            stagger: args.stagger,
            episode_len: args.episode_len,
        };
        let file = FileConfig { episodes: None, ..file.clone() };
        let e = EvalPlan::resolve(&eval, &file)?;
        let episode = args.episode.or(file.episode).unwrap_or(0);
        if episode != 0 && scenario != ScenarioKind::Duel {
            return Err(usage("--episode only applies to the duel scenario"));
        }
        Ok(Self { scenario, ego: e.ego, bg: e.bg, episode, stagger: e.stagger, episode_len: e.episode_len })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("fairflow").chain(args.iter().copied())).unwrap()
    }

    fn train_plan(args: &[&str], file: &FileConfig) -> Result<TrainPlan> {
        let cli = parse(args);
        let globals = Globals::resolve(&cli, file)?;
        match &cli.command {
            Command::Train(t) => TrainPlan::resolve(t, file, &globals),
            _ => unreachable!(),
        }
    }

    #[test]
    fn lambda_rejected_outside_strategy_a() {
        let err = train_plan(&["train", "--strategy", "base", "--lambda", "2"], &FileConfig::default()).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
        assert!(train_plan(&["train", "--strategy", "c", "--lambda", "2"], &FileConfig::default()).is_err());
        assert!(train_plan(&["train", "--strategy", "a", "--loss-coef", "8000", "--baseline", "b.json"], &FileConfig::default()).is_err());
    }

    #[test]
    fn strategy_params_reach_the_config() {
        let p = train_plan(&["train", "--strategy", "a", "--lambda", "5", "--baseline", "b.json", "--seed", "7"], &FileConfig::default()).unwrap();
        assert_eq!((p.config.lambda, p.config.seed), (5.0, 7));
        assert_eq!(p.stem(), "a-lambda-5");
        let p = train_plan(&["train", "--strategy", "c", "--loss-coef", "16000", "--steps", "4096"], &FileConfig::default()).unwrap();
        assert_eq!((p.config.loss_coef, p.config.total_steps), (16000.0, 4096));
        assert_eq!(p.stem(), "c-loss-16000");
    }

    #[test]
    fn background_strategies_need_a_baseline() {
        assert!(train_plan(&["train", "--strategy", "b"], &FileConfig::default()).is_err());
        assert!(train_plan(&["train", "--strategy", "base", "--baseline", "x.json"], &FileConfig::default()).is_err());
    }

    #[test]
    fn flags_override_config_file() {
        let file: FileConfig = toml::from_str("seed = 3\nstrategy = \"c\"\nloss-coef = 4000.0\nsteps = 8192\n").unwrap();
        let p = train_plan(&["train", "--steps", "4096"], &file).unwrap();
        assert_eq!((p.config.seed, p.config.loss_coef, p.config.total_steps), (3, 4000.0, 4096));
        let p = train_plan(&["train", "--seed", "9"], &file).unwrap();
        assert_eq!((p.config.seed, p.config.total_steps), (9, 8192));
    }

    #[test]
    fn unknown_config_keys_rejected() {
        assert!(toml::from_str::<FileConfig>("sead = 3\n").is_err());
    }

    #[test]
    fn eval_defaults_depend_on_scenario() {
        let eval = |args: &[&str]| match parse(args).command {
            Command::Eval(e) => EvalPlan::resolve(&e, &FileConfig::default()),
            _ => unreachable!(),
        };
        let duel = eval(&["eval", "--scenario", "duel", "--ego", "a.json", "--bg", "cubic"]).unwrap();
        assert_eq!((duel.episodes, duel.stagger, duel.episode_len), (50, 50, 400));
        assert_eq!(duel.bg, Some(ControllerSpec::Cubic));
        let mixed = eval(&["eval", "--scenario", "cubic", "--ego", "c.json"]).unwrap();
        assert_eq!(mixed.stagger, 0);
        assert!(eval(&["eval", "--scenario", "duel", "--ego", "a.json"]).is_err());
        assert!(eval(&["eval", "--scenario", "single", "--ego", "cubic", "--bg", "cubic"]).is_err());
        assert!(eval(&["eval", "--scenario", "duel", "--ego", "a", "--bg", "b", "--stagger", "400"]).is_err());
        assert!(eval(&["eval", "--scenario", "bogus", "--ego", "a"]).is_err());
    }

    #[test]
    fn sweep_grids() {
        let sweep = |args: &[&str]| {
            let cli = parse(args);
            let g = Globals::resolve(&cli, &FileConfig::default()).unwrap();
            match &cli.command {
                Command::Sweep(s) => SweepPlan::resolve(s, &FileConfig::default(), &g),
                _ => unreachable!(),
            }
        };
        assert_eq!(sweep(&["sweep", "--strategy", "a"]).unwrap().entries.len(), 4);
        assert_eq!(sweep(&["sweep"]).unwrap().entries.len(), 8);
        assert!(sweep(&["sweep", "--strategy", "base"]).is_err());
    }

    #[test]
    fn global_flags_after_subcommand() {
        let cli = parse(&["train", "--strategy", "base", "--out", "x", "--jobs", "2"]);
        let g = Globals::resolve(&cli, &FileConfig::default()).unwrap();
        assert_eq!((g.out, g.jobs, g.seed), (PathBuf::from("x"), Some(2), DEFAULT_SEED));
    }
}
