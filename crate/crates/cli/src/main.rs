mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;
use sosiq_core::Error;

use args::Cli;

/// Exit statuses: 0 success, 1 usage, 2 data, 3 numerical failure.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parameter(_) => 1,
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    run(argv)
}

fn run(argv: Vec<String>) -> ExitCode {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };

    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();

    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        // Fails only if a pool already exists (replay); the first setting wins.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }

    if let args::Command::Replay(r) = &cli.command {
        return match config::read_argv(&r.config) {
            Ok(rest) => {
                let mut again = vec![argv[0].clone()];
                again.extend(rest);
                log::info!("replaying: {}", again[1..].join(" "));
                run(again)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(exit_code(&e))
            }
        };
    }

    match commands::dispatch(cli.command, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
