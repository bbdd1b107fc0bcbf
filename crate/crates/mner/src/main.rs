use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(mner::cli::run())
}
