use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(lexsig_cli::run_cli(std::env::args_os()))
}
