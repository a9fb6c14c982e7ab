use std::process::ExitCode;

fn main() -> ExitCode {
    editlab_cli::main_with_args(std::env::args_os())
}
