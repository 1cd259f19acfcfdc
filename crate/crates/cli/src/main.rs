use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("KCGC_LOG", "info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    ExitCode::from(kcgc::main_with_args(std::env::args_os()))
}
