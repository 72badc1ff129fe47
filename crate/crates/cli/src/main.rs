//! Command-line orchestration for the priorsplat pipeline.
//!
//! Exit codes: 0 success, 2 configuration error, 3 missing or stale
//! prerequisite, 4 numerical divergence, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use priorsplat_core::config::{Profile, RunConfig};
use priorsplat_core::pipeline::{run_phases, Phase, PhaseOutcome, PipelineError};
use priorsplat_core::plot::render_run_plots;
use priorsplat_core::providers::ProviderSet;
use priorsplat_core::scenegen::read_dataset;

#[derive(Parser)]
#[command(name = "priorsplat", version, about = "Two-stage transient-robust 2D gaussian splatting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Config file of `key = value` overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the configured out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Base profile the overrides apply to.
    #[arg(long, default_value = "desk")]
    profile: String,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the synthetic dataset into <out>/dataset.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run pipeline phases against an output directory.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// One of stage1, priors, stage2, eval, ablation, all.
        #[arg(long, default_value = "all")]
        phase: String,
        /// Rerun phases and ignore upstream config-hash mismatches.
        #[arg(long)]
        force: bool,
    },
    /// Render loss/schedule/mask figures from a finished run.
    Plot {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Validate configured ingest providers against the dataset.
    IngestCheck {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn resolve_config(common: &CommonArgs) -> Result<(RunConfig, PathBuf), PipelineError> {
    let profile = Profile::parse(&common.profile).map_err(PipelineError::Config)?;
    let mut config = RunConfig::for_profile(profile);
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path)
            .map_err(|source| PipelineError::Io { path: path.clone(), source })?;
        config.apply_text(&text).map_err(PipelineError::Config)?;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&config.out_dir));
    config.validate().map_err(PipelineError::Config)?;
    Ok((config, out))
}

fn cmd_generate(common: &CommonArgs) -> Result<(), PipelineError> {
    let (config, out) = resolve_config(common)?;
    let reports = run_phases(&config, &out, &[Phase::Generate], false)?;
    match reports[0].outcome {
        PhaseOutcome::UpToDate => println!("dataset: up-to-date (skipped)"),
        PhaseOutcome::Ran => println!(
            "dataset: {} views at {}x{} px, {} transients per view (p_persist {}), seed {} -> {}",
            config.views,
            config.image_width,
            config.image_height,
            config.transients_per_view,
            config.p_persist,
            config.seed,
            out.join("dataset").display()
        ),
    }
    Ok(())
}

fn cmd_run(common: &CommonArgs, phase: &str, force: bool) -> Result<(), PipelineError> {
    let (config, out) = resolve_config(common)?;
    let phases = Phase::parse_list(phase)?;
    for report in run_phases(&config, &out, &phases, force)? {
        match report.outcome {
            PhaseOutcome::Ran => println!("phase {}: done", report.phase.name()),
            PhaseOutcome::UpToDate => {
                println!("phase {}: up-to-date (skipped)", report.phase.name())
            }
        }
    }
    Ok(())
}

fn cmd_plot(common: &CommonArgs) -> Result<(), PipelineError> {
    let (_, out) = resolve_config(common)?;
    for path in render_run_plots(&out)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_ingest_check(common: &CommonArgs) -> Result<(), PipelineError> {
    let (config, out) = resolve_config(common)?;
    let dataset = out.join("dataset");
    if !dataset.exists() {
        return Err(PipelineError::MissingPrerequisite {
            phase: "ingest-check",
            missing: "generate",
        });
    }
    let (mut views, _) = read_dataset(&dataset)?;
    let providers: ProviderSet = config.provider_set().map_err(PipelineError::Config)?;
    providers.prime(&mut views)?;
    println!(
        "providers ok: features, instances and depth load for all {} views",
        views.len()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match &cli.command {
        Command::Generate { common } => cmd_generate(common),
        Command::Run { common, phase, force } => cmd_run(common, phase, *force),
        Command::Plot { common } => cmd_plot(common),
        Command::IngestCheck { common } => cmd_ingest_check(common),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
