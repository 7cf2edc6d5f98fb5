use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(bilbo_kit::cli::run(std::env::args_os()))
}
