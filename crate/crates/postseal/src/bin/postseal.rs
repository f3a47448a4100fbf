use std::process::ExitCode;

fn main() -> ExitCode {
    postseal::cli::run(std::env::args_os())
}
