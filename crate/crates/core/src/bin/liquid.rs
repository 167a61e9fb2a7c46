use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(liquid_core::cli::run(std::env::args_os()))
}
