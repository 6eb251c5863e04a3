use clap::Parser;
use slhyde_cli::{run, Cli, Command};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(outcome) => {
            if let Command::Evaluate { .. } = cli.command {
                if let Ok(report) = std::fs::read_to_string(outcome.dir.join("report.txt")) {
                    print!("{report}");
                }
            }
            outcome.exit_code()
        }
        Err(e) => {
            log::error!("{}: {e}", cli.command.name());
            e.exit_code()
        }
    };
    std::process::exit(code);
}
