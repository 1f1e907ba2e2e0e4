/// Line to stdout; a closed pipe is not an error.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

mod cli;
mod commands;
mod config;
mod error;
mod output;
mod plot;

use std::process::ExitCode;

use clap::Parser;

use crate::cli::{Cli, Command};
use crate::config::RunConfig;
use crate::error::CliResult;
use crate::output::OutDir;

fn run(cli: Cli) -> CliResult<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let root = cli.out.or_else(|| cfg.out.clone()).unwrap_or_else(|| "out".into());
    let mut out = OutDir::create(&root, cli.format)?;
    let seed = cli.seed.or(cfg.seed);
    match cli.command {
        Command::Modes(a) => commands::modes::run(&cfg, &a, &mut out),
        Command::Strayfield(a) => commands::strayfield::run(&cfg, &a, &mut out),
        Command::Dipoles(a) => commands::dipoles::run(&cfg, &a, &mut out),
        Command::Noisefit(a) => commands::noisefit::run(&cfg, &a, &mut out),
        Command::Magnetics(a) => commands::magnetics::run(&cfg, &a, &mut out),
        Command::Synth(a) => commands::synth::run(&cfg, &a, seed, &mut out),
        Command::Transport(a) => commands::transport::run(&cfg, &a, &mut out),
        Command::Layout(a) => commands::layout::run(&cfg, &a, &mut out),
    }?;
    for p in out.written() {
        say!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("penning-probe: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(4),
    }
}
