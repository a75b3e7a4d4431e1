mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;
use qdm_core::{Error, ErrorCategory};

use commands::Command;

#[derive(Parser)]
#[command(name = "qdm", version, about = "Batch analysis of NV-diamond QDM data cubes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Exit codes; see the README table.
fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Io => 3,
        ErrorCategory::Format => 4,
        ErrorCategory::Mismatch => 5,
        ErrorCategory::Input => 6,
        ErrorCategory::Numeric => 7,
    }
}

fn report(category: &str, message: &str) {
    let body = serde_json::json!({ "error": { "category": category, "message": message } });
    eprintln!("{body}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            report(category.as_str(), &message(&e));
            ExitCode::from(exit_code(category))
        }
    }
}

fn message(e: &Error) -> String {
    match e {
        Error::PeakCount { found, .. } => {
            let centers: Vec<String> = found.iter().map(|w| format!("{:.3}", w.center_mhz)).collect();
            format!("{e}; groups found at [{}] MHz", centers.join(", "))
        }
        _ => e.to_string(),
    }
}
