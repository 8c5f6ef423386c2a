use asymrisk_cli::config::Cli;
use asymrisk_cli::error::Outcome;
use clap::Parser;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap uses 2 for usage errors, which here means numerical failure
            let code = if e.use_stderr() { Outcome::ValidationFailure.code() } else { 0 };
            std::process::exit(code);
        }
    };
    std::process::exit(asymrisk_cli::run(&cli).code());
}
