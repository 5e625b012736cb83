use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(lift3d_cli::run(std::env::args()) as u8)
}
