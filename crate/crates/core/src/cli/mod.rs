//! Config-driven command-line entry point.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::Parser;

pub use commands::*;
pub use config::*;

use crate::error::Error;

#[derive(Debug, Parser)]
#[command(name = "noisedesign", version, about = "Diffusion-sampler noise design for microstructures")]
pub struct Cli {
    /// train | sample | gradcheck | design | gmm-demo
    pub command: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory (overrides `out` in the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Config file plus command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if !COMMANDS.contains(&cli.command.as_str()) {
        return Err(Error::Config(vec![format!(
            "unknown command `{}` (expected one of {})",
            cli.command,
            COMMANDS.join(", ")
        )]));
    }
    if !cfg.command.is_empty() && cfg.command != cli.command {
        return Err(Error::Config(vec![format!(
            "config is for `{}` but `{}` was requested",
            cfg.command, cli.command
        )]));
    }
    cfg.command = cli.command.clone();
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.to_string_lossy().into_owned();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report_error(e: &Error) -> i32 {
    let (kind, code) = match e {
        Error::Config(_) => ("config", 2),
        Error::Io { .. } => ("io", 1),
        Error::Stage { .. } => ("design_stage", 1),
        _ => ("runtime", 1),
    };
    eprintln!("status=error kind={kind}");
    for line in e.to_string().lines() {
        eprintln!("message={}", line.trim());
    }
    code
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => return report_error(&e),
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global() {
        log::debug!("thread pool already initialized: {e}");
    }
    let dir = PathBuf::from(&cfg.out);
    match execute(&cli.command, &cfg, &dir) {
        Ok(summary) => {
            print!("{summary}");
            println!("status=ok run_dir={}", dir.display());
            0
        }
        Err(e) => {
            let _ = crate::export::write_text(&dir.join("error.txt"), &format!("{e}\n"));
            report_error(&e)
        }
    }
}
