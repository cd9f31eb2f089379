use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(qcausal_cli::run(std::env::args()) as u8)
}
