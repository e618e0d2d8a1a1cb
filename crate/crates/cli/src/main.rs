use std::process::ExitCode;

fn main() -> ExitCode {
    mpvit_cli::run()
}
