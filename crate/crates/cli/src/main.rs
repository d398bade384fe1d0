use std::process::ExitCode;

fn main() -> ExitCode {
    caranet_cli::main_with(std::env::args_os())
}
