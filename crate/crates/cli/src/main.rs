//! `errw-lab`: seeded experiments on reinforced walks and their mixing field.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{Kind, Overrides};

#[derive(Parser, Debug)]
#[command(name = "errw-lab", version, about = "Experiments on edge-reinforced walks and the (u, s) field")]
struct Cli {
    /// Experiment to run.
    #[arg(value_enum)]
    kind: Kind,
    /// JSON file with settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: Overrides,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = config::parse_config(cli.kind, cli.config.as_deref(), cli.flags).and_then(|cfg| {
        if let Some(t) = cfg.threads {
            rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
        }
        run::run(&cfg)
    });
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
