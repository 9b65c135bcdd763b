use std::process::ExitCode;

use biased_qkd::cli::{main_with_args, SEED_ENV};

fn main() -> ExitCode {
    let env_seed = std::env::var(SEED_ENV).ok();
    ExitCode::from(main_with_args(std::env::args_os(), env_seed.as_deref()))
}
