//! `nbm-audit`: batch driver for the availability-claim audit pipeline.
//!
//! Exit codes: 0 success, 1 invalid configuration or missing input, 2 bad
//! or inconsistent data.

mod config;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nbm_core::evalharness::SplitKind;
use nbm_core::synthworld::PlantedMisreport;

use config::RunConfig;
use manifest::{digests, DirLock, Manifest, MANIFEST_FILE};
use stages::Run;

#[derive(Debug)]
pub enum CliError {
    Validation(anyhow::Error),
    Data(anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(e) => write!(f, "invalid run: {e:#}"),
            CliError::Data(e) => write!(f, "data error: {e:#}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "nbm-audit", version, about = "Audit broadband availability claims against crowdsourced evidence")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, env = "NBM_AUDIT_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides `output_dir`.
    #[arg(long, short, global = true)]
    output_dir: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `train.threshold`.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse every input and print record counts.
    IngestCheck,
    /// Claims removed, added or modified between two snapshots.
    Diff {
        #[arg(long)]
        old: Option<PathBuf>,
        #[arg(long)]
        new: Option<PathBuf>,
        /// Delta file (NDJSON); defaults to the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Match providers to ASNs through registration and registry contacts.
    Match,
    /// Reproject crowdsourced tiles and attribute speed tests to claimed cells.
    Localize,
    /// Build the balanced labeled dataset.
    Label,
    /// Vectorize labeled observations and every claim.
    Featurize,
    /// Split and train the classifier.
    Train {
        #[arg(long)]
        features: Option<PathBuf>,
        #[command(flatten)]
        split: SplitArgs,
    },
    /// Score the test split and every claim.
    Evaluate {
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Retrain on label-source subsets against the same test split.
    Ablate {
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Headline statistics: challenge tables, label composition, match rate
    /// and holdout AUCs.
    Report,
    /// Generate a synthetic world bundle with ground truth.
    Synth(SynthArgs),
    /// Every stage from diff through report.
    Pipeline {
        #[command(flatten)]
        split: SplitArgs,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitChoice {
    Random,
    Fcc,
    States,
}

#[derive(Args, Debug, Default)]
struct SplitArgs {
    #[arg(long, value_enum)]
    split: Option<SplitChoice>,
    #[arg(long)]
    test_fraction: Option<f64>,
    /// State held out by `--split states`; repeatable.
    #[arg(long = "hold-out")]
    hold_out: Vec<String>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    states: Option<usize>,
    #[arg(long)]
    providers: Option<usize>,
    #[arg(long)]
    cells_per_state: Option<usize>,
    #[arg(long)]
    overclaim_rate: Option<f64>,
    #[arg(long)]
    name_noise: Option<f64>,
    /// Provider index given a single contiguous overclaimed region.
    #[arg(long)]
    planted_provider: Option<usize>,
    #[arg(long, default_value_t = 0.3)]
    planted_fraction: f64,
}

fn apply_split(cfg: &mut RunConfig, a: &SplitArgs) {
    let fraction = a.test_fraction.unwrap_or(match &cfg.split.kind {
        SplitKind::RandomObservation { test_fraction } | SplitKind::FccAdjudicatedOnly { test_fraction } => *test_fraction,
        SplitKind::HeldOutStates { .. } => 0.1,
    });
    match a.split {
        Some(SplitChoice::Random) => cfg.split.kind = SplitKind::RandomObservation { test_fraction: fraction },
        Some(SplitChoice::Fcc) => cfg.split.kind = SplitKind::FccAdjudicatedOnly { test_fraction: fraction },
        Some(SplitChoice::States) => cfg.split.kind = SplitKind::HeldOutStates { states: a.hold_out.clone() },
        None => match &mut cfg.split.kind {
            SplitKind::RandomObservation { test_fraction } | SplitKind::FccAdjudicatedOnly { test_fraction } => {
                *test_fraction = fraction
            }
            SplitKind::HeldOutStates { states } if !a.hold_out.is_empty() => *states = a.hold_out.clone(),
            SplitKind::HeldOutStates { .. } => {}
        },
    }
}

fn build_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &cli.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.world.seed = s;
    }
    if let Some(t) = cli.threshold {
        cfg.train.threshold = t;
    }
    match &cli.command {
        Command::Train { split, .. } | Command::Pipeline { split } => apply_split(&mut cfg, split),
        Command::Synth(a) => {
            let w = &mut cfg.world;
            w.n_states = a.states.unwrap_or(w.n_states);
            w.n_providers = a.providers.unwrap_or(w.n_providers);
            w.cells_per_state = a.cells_per_state.unwrap_or(w.cells_per_state);
            w.overclaim_rate = a.overclaim_rate.unwrap_or(w.overclaim_rate);
            w.name_noise_level = a.name_noise.unwrap_or(w.name_noise_level);
            if let Some(p) = a.planted_provider {
                w.planted = Some(PlantedMisreport { provider: p, fraction: a.planted_fraction });
            }
        }
        _ => {}
    }
    if !(cfg.train.threshold > 0.0 && cfg.train.threshold < 1.0) {
        return Err(CliError::Validation(anyhow::anyhow!("threshold must be in (0, 1)")));
    }
    cfg.propagate_seed();
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let cfg = build_config(&cli)?;
    let _lock = DirLock::acquire(&cfg.output_dir)?;
    let mut run = Run::new(cfg);
    let name = match &cli.command {
        Command::IngestCheck => {
            stages::ingest_check(&mut run)?;
            "ingest-check"
        }
        Command::Diff { old, new, out } => {
            stages::diff(&mut run, old.clone(), new.clone(), out.clone())?;
            "diff"
        }
        Command::Match => {
            stages::match_providers_stage(&mut run)?;
            "match"
        }
        Command::Localize => {
            stages::localize(&mut run)?;
            "localize"
        }
        Command::Label => {
            stages::label(&mut run)?;
            "label"
        }
        Command::Featurize => {
            stages::featurize(&mut run)?;
            "featurize"
        }
        Command::Train { features, .. } => {
            stages::train(&mut run, features.clone())?;
            "train"
        }
        Command::Evaluate { features, model } => {
            stages::evaluate(&mut run, features.clone(), model.clone())?;
            "evaluate"
        }
        Command::Ablate { features } => {
            stages::ablate(&mut run, features.clone())?;
            "ablate"
        }
        Command::Report => {
            stages::report(&mut run)?;
            "report"
        }
        Command::Synth(_) => {
            stages::synth(&mut run)?;
            "synth"
        }
        Command::Pipeline { .. } => {
            stages::pipeline(&mut run)?;
            "pipeline"
        }
    };
    write_manifest(&run, name)
}

fn write_manifest(run: &Run, command: &str) -> Result<(), CliError> {
    let out_dir = run.cfg.output_dir.as_path();
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        seed: run.cfg.seed,
        config: serde_json::to_value(&run.cfg).map_err(|e| CliError::Data(e.into()))?,
        inputs: digests(&run.read, Some(out_dir)).map_err(CliError::Data)?,
        outputs: digests(&run.written, Some(out_dir)).map_err(CliError::Data)?,
    };
    let p = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&m).map_err(|e| CliError::Data(e.into()))?;
    std::fs::write(&p, text + "\n").map_err(|e| CliError::Data(anyhow::anyhow!("cannot write {}: {e}", p.display())))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
