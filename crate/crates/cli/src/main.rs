use clap::Parser;

use afts_cli::error::{CliError, ErrorReport};
use afts_cli::Cli;

fn fail(report: ErrorReport) -> ! {
    eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
    std::process::exit(report.exit_code);
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => fail(CliError::Config(e.to_string().trim_end().to_string()).report()),
    };
    if let Err(e) = afts_cli::run(&cli) {
        fail(e.report());
    }
}
