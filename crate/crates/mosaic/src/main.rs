use std::process::ExitCode;

fn main() -> ExitCode {
    mosaic::cli::run()
}
