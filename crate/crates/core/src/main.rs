use std::process::ExitCode;

fn main() -> ExitCode {
    cusp_tower::cli::run(std::env::args_os())
}
