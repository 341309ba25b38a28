use clap::Parser;

use tfpack::cli::{run, Cli};
use tfpack::ErrorCategory;

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error[{}]: {err}", err.category());
        let code = match err.category() {
            ErrorCategory::Input => 2,
            ErrorCategory::Constraint => 3,
            ErrorCategory::Internal => 1,
        };
        std::process::exit(code);
    }
}
