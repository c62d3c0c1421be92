use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(nskqg_cli::run(std::env::args_os()) as u8)
}
