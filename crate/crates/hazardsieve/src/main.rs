use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(hazardsieve::cli::run(std::env::args_os()))
}
