use std::process::ExitCode;

use matchcover::cli::{parse_args, run, EXIT_OK, EXIT_USAGE};

fn main() -> ExitCode {
    let cfg = match parse_args(std::env::args_os().skip(1)) {
        Ok(cfg) => cfg,
        Err(e) if e.is_help => {
            print!("{e}");
            return ExitCode::from(EXIT_OK as u8);
        }
        Err(e) => {
            eprint!("{e}");
            if !e.message.ends_with('\n') {
                eprintln!();
            }
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    ExitCode::from(run(&cfg) as u8)
}
