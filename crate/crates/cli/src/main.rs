mod config;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use digca::experiment::run_experiment;

use crate::config::{resolve, Args};

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let cfg = match resolve(&args) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let outcome = match run_experiment(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    for r in &outcome.runs {
        if r.violations > 0 {
            eprintln!(
                "degree {} problem {} seed {}: {} violations (see {})",
                r.degree,
                r.problem,
                r.seed,
                r.violations,
                r.jsonl.display()
            );
        }
    }
    println!(
        "{} runs written; summary in {}",
        outcome.runs.len(),
        outcome.summary_path.display()
    );
    ExitCode::from(status(outcome.violations()))
}

fn status(violations: usize) -> u8 {
    if violations > 0 {
        2
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    #[test]
    fn violations_map_to_exit_code_two() {
        assert_eq!(super::status(0), 0);
        assert_eq!(super::status(1), 2);
        assert_eq!(super::status(17), 2);
    }
}
