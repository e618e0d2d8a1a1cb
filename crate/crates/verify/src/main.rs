//! The `mpvit` entry point built inside this package. Cargo only hands
//! binaries to tests of their own package, and the acceptance suite runs the
//! command line as a subprocess.

use std::process::ExitCode;

fn main() -> ExitCode {
    mpvit_cli::run()
}
