use std::process::ExitCode;

use inexact_auc::cli::cli_parse;
use inexact_auc::experiment::{emit_report, run_experiment_partial, ExperimentOutput};

fn print_summary(out: &ExperimentOutput) {
    let report = &out.report;
    println!(
        "dataset {} | {} repeat(s) | {:.1}s",
        report.dataset, report.n_repeats, report.total_seconds
    );
    for m in &report.modes {
        let lambdas: Vec<String> = m
            .repeats
            .iter()
            .map(|r| inexact_auc::experiment::lambda_label(r.chosen_lambda))
            .collect();
        println!(
            "{:>9}  AUC {:.3} +/- {:.3}  lambda [{}]",
            m.mode.as_str(),
            m.mean_test_auc,
            m.std_error,
            lambdas.join(", ")
        );
    }
}

fn main() -> ExitCode {
    let config = match cli_parse(std::env::args_os()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let (output, error) = run_experiment_partial(&config);
    if output.report.n_repeats > 0 {
        print_summary(&output);
    }
    if let Some(dir) = &config.output_dir {
        if let Err(e) = emit_report(&output, dir) {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match error {
        None => ExitCode::SUCCESS,
        Some(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(1)
        }
    }
}
