use std::process::ExitCode;

fn main() -> ExitCode {
    // TGDM_LOG=debug|info controls verbosity.
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TGDM_LOG", "info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    match tgdm_cli::run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
