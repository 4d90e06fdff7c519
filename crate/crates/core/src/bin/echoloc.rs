use std::process::ExitCode;

fn main() -> ExitCode {
    echoloc::cli::main_with_args(std::env::args_os())
}
