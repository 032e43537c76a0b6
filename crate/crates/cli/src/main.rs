use std::process::ExitCode;

fn main() -> ExitCode {
    mfpc_cli::run(std::env::args_os(), std::env::vars())
}
