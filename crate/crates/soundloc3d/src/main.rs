use std::process::ExitCode;

fn main() -> ExitCode {
    soundloc3d::cli::run()
}
