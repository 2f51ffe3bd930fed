use clap::Parser;
use ebound_cli::commands::{run, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap prints help/version through the error path with code 0
            if err.exit_code() == 0 {
                let _ = err.print();
                std::process::exit(0);
            }
            let _ = err.print();
            std::process::exit(64);
        }
    };
    match run(cli) {
        Ok((text, code)) => {
            print!("{text}");
            std::process::exit(code);
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}
