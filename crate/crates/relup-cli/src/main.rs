use clap::Parser;

use relup_cli::args::{Cli, Command};
use relup_cli::commands;
use relup_cli::CliError;

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train(args) => {
            commands::cmd_train(args)?;
        }
        Command::Sweep(args) => {
            commands::cmd_sweep(args)?;
        }
        Command::Ablate(args) => {
            commands::cmd_ablate(args)?;
        }
        Command::Bench(args) => {
            commands::cmd_bench(args)?;
        }
        Command::ExportEmbeddings(args) => {
            commands::cmd_export_embeddings(args)?;
        }
        Command::ParseCheck(args) => {
            commands::cmd_parse_check(args)?;
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
