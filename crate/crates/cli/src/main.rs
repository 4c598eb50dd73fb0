mod attrs;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use commands::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: InternalError: cannot start {n} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (class, code) = classify(&e);
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {class}: {msg}");
            ExitCode::from(code)
        }
    }
}

/// Error class and exit status: 2 for bad input, 1 for internal failures.
fn classify(e: &anyhow::Error) -> (&'static str, u8) {
    match e.chain().find_map(|c| c.downcast_ref::<agstn::Error>()) {
        Some(err) if err.is_user_error() => (err.class(), 2),
        Some(err) => (err.class(), 1),
        None => ("InternalError", 1),
    }
}
