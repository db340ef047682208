use std::process::ExitCode;

fn main() -> ExitCode {
    lesionlab::cli::run()
}
