use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scn_core::config::RunConfig;
use scn_core::workflow::{self, Command};
use scn_core::{Error, ErrorKind};

/// Sparse causal voxel selection and ICA network comparison.
///
/// Settings come from built-in defaults, then `--config`, then `SCN_*`
/// environment variables (`SCN_STAGE1_N_LAMBDAS` sets `stage1.n_lambdas`),
/// then command-line flags.
#[derive(Debug, Parser)]
#[command(name = "scn", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// `key = value` configuration file
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads (0 = one per core)
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,
    /// Directory holding the `sub-*` subject folders
    #[arg(long, global = true, value_name = "DIR")]
    cohort: Option<PathBuf>,
    /// Override any configuration key; repeatable
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the effective configuration and exit
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Cmd {
    /// Write a synthetic cohort to the output directory
    Synth,
    /// Region-wise ℓ2,1 selection of candidate driver voxels
    Stage1,
    /// Per-voxel LASSO and support-constrained ridge refit
    Stage2,
    /// Permutation test of the ridge model
    Significance,
    /// Spatial ICA on each subject's selected voxels
    Ica,
    /// Concatenation-ICA group baseline
    GroupIca,
    /// Inter-subject and individual-group similarity profiles
    Similarity,
    /// Hierarchical clustering of the similarity profiles
    Cluster,
    /// stage1 through cluster
    Pipeline,
}

impl Cmd {
    fn command(self) -> Command {
        match self {
            Cmd::Synth => Command::Synth,
            Cmd::Stage1 => Command::Stage1,
            Cmd::Stage2 => Command::Stage2,
            Cmd::Significance => Command::Significance,
            Cmd::Ica => Command::Ica,
            Cmd::GroupIca => Command::GroupIca,
            Cmd::Similarity => Command::Similarity,
            Cmd::Cluster => Command::Cluster,
            Cmd::Pipeline => Command::Pipeline,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numerical => 3,
    }
}

fn build_config(c: &Common) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(c.config.as_deref())?;
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set {kv}: expected KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = c.threads {
        cfg.threads = threads;
    }
    if let Some(dir) = &c.output {
        cfg.output_dir = dir.clone();
    }
    if let Some(dir) = &c.cohort {
        cfg.cohort_dir = dir.clone();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = build_config(&cli.common).and_then(|cfg| {
        if cli.common.print_config {
            print!("{}", cfg.serialize());
            return Ok(());
        }
        let summary = workflow::run(cli.command.command(), &cfg)?;
        log::info!("{} outputs; manifest {}", summary.outputs.len(), summary.manifest.display());
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
