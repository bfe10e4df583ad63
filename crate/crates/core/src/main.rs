use std::process::ExitCode;

fn main() -> ExitCode {
    match qsl_core::cli::run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(qsl_core::cli::CliError::Display(text)) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("qsl-sweep: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
