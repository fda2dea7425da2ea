//! `phasessl` — enhancement, splits, SSL training, evaluation and report
//! rendering, all reproducible from one JSON config plus seeds.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "phasessl",
    version,
    about = "Local-phase multi-feature enhancement and teacher/student SSL"
)]
struct Cli {
    /// JSON run configuration (defaults apply when omitted)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's global seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Suppress progress output
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute multi-feature sidecars and preview PNGs for a set of images
    Enhance {
        /// Image directory or manifest CSV
        #[arg(long)]
        input: PathBuf,
    },
    /// Generate seeded stratified subject-disjoint splits
    Split {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Run the five-step teacher/student pipeline over every repeat
    Ssl {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory of split_r*.json files (regenerated from config when omitted)
        #[arg(long)]
        splits: Option<PathBuf>,
        /// MF_TS, CXR_TS, ENH_TS or MF_T (overrides config)
        #[arg(long)]
        variant: Option<String>,
        /// Labeled fraction of the training pool (overrides config)
        #[arg(long)]
        labeled_fraction: Option<f64>,
        /// Directory holding .mfi sidecars (default: next to each image)
        #[arg(long)]
        mf_dir: Option<PathBuf>,
        /// Compute multi-feature inputs on the fly instead of reading sidecars
        #[arg(long)]
        enhance_on_the_fly: bool,
    },
    /// Evaluate a checkpoint on one role of a split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Split JSON file
        #[arg(long)]
        splits: PathBuf,
        /// Role to evaluate: labeled, unlabeled, val, stop or test
        #[arg(long, default_value = "test")]
        role: String,
        /// Stream gating: both, cxr or mf
        #[arg(long, default_value = "both")]
        mode: String,
        #[arg(long)]
        mf_dir: Option<PathBuf>,
        #[arg(long)]
        enhance_on_the_fly: bool,
    },
    /// Render aggregate reports into a comparison table CSV
    Report {
        /// Directory scanned recursively for aggregate.json files
        #[arg(long)]
        reports: PathBuf,
        /// Optional `METHOD_A,METHOD_B` pair for a paired t-test column
        #[arg(long)]
        ttest: Option<String>,
    },
    /// Generate the synthetic three-class corpus
    Synth {
        #[arg(long, default_value_t = 300)]
        per_class: usize,
        /// WxH, e.g. 64x64
        #[arg(long, default_value = "64x64")]
        dims: String,
    },
}

/// Command failure with its process exit code: 1 for data/runtime
/// failures, 2 for usage/config errors.
pub struct Failure {
    exit: u8,
    message: String,
}

impl Failure {
    pub fn data(message: impl ToString) -> Self {
        Self {
            exit: 1,
            message: message.to_string(),
        }
    }

    pub fn usage(message: impl ToString) -> Self {
        Self {
            exit: 2,
            message: message.to_string(),
        }
    }
}

pub type CmdResult = Result<(), Failure>;

/// Shared command context.
pub struct Ctx {
    pub config: RunConfig,
    pub out: PathBuf,
    pub quiet: bool,
}

impl Ctx {
    pub fn say(&self, message: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", message.as_ref());
        }
    }
}

fn build_ctx(cli: &Cli) -> Result<Ctx, Failure> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(Failure::usage)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out)
        .map_err(|e| Failure::data(format!("cannot create {}: {e}", out.display())))?;
    Ok(Ctx {
        config,
        out,
        quiet: cli.quiet,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = match build_ctx(&cli) {
        Ok(ctx) => ctx,
        Err(f) => {
            eprintln!("error: {}", f.message);
            return ExitCode::from(f.exit);
        }
    };
    let result = match &cli.command {
        Command::Enhance { input } => commands::enhance::run(&ctx, input),
        Command::Split { manifest } => commands::split::run(&ctx, manifest),
        Command::Ssl {
            manifest,
            splits,
            variant,
            labeled_fraction,
            mf_dir,
            enhance_on_the_fly,
        } => commands::ssl::run(
            &ctx,
            manifest,
            splits.as_deref(),
            variant.as_deref(),
            *labeled_fraction,
            mf_dir.as_deref(),
            *enhance_on_the_fly,
        ),
        Command::Eval {
            checkpoint,
            manifest,
            splits,
            role,
            mode,
            mf_dir,
            enhance_on_the_fly,
        } => commands::eval::run(
            &ctx,
            checkpoint,
            manifest,
            splits,
            role,
            mode,
            mf_dir.as_deref(),
            *enhance_on_the_fly,
        ),
        Command::Report { reports, ttest } => {
            commands::report::run(&ctx, reports, ttest.as_deref())
        }
        Command::Synth { per_class, dims } => commands::synth::run(&ctx, *per_class, dims),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.exit)
        }
    }
}
