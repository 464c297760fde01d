use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(indexid_cli::main_with(std::env::args_os()))
}
