use clap::Parser;
use graphmark_cli::commands::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let code = match run(cli, &mut std::io::stdout()) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
