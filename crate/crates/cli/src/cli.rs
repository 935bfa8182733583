//! Argument parsing and stage dispatch.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use cmrfusion_core::pipeline::{Pipeline, PipelineConfig, Stage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Phantom,
    Sync,
    Register,
    Segment,
    Sectorize,
    Mie,
    Pamm,
    Report,
    /// Every analysis stage, sync through report.
    All,
    /// Serve the review HTTP API over the output directory.
    Serve,
}

impl Command {
    pub fn stage(self) -> Option<Stage> {
        Some(match self {
            Command::Phantom => Stage::Phantom,
            Command::Sync => Stage::Sync,
            Command::Register => Stage::Register,
            Command::Segment => Stage::Segment,
            Command::Sectorize => Stage::Sectorize,
            Command::Mie => Stage::Mie,
            Command::Pamm => Stage::Pamm,
            Command::Report => Stage::Report,
            Command::All | Command::Serve => return None,
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "cmrfusion", version, about = "Joint Cine / delayed-enhancement cardiac MR analysis")]
pub struct Args {
    pub command: Command,
    /// Pipeline config (JSON). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Port for `serve`.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

pub fn load_config(args: &Args) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

/// Runs a stage command and returns the written artifact paths.
pub fn run_stage(args: &Args) -> Result<Vec<PathBuf>> {
    let pipeline = Pipeline::new(load_config(args)?)?;
    let written = match args.command.stage() {
        Some(st) => pipeline.run(st)?,
        None => pipeline.run_all()?,
    };
    Ok(written)
}
