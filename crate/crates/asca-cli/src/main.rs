use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use asca_cli::config;
use asca_cli::pipeline;

const EXIT_DATA: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "asca", version, about = "Calendar-structured effect decomposition with permutation testing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the pipeline a config describes and write its artifacts.
    Run {
        config: PathBuf,
        /// Write artifacts here instead of the configured output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check a config without touching any data.
    Validate { config: PathBuf },
    /// Print the tool version.
    Version,
}

fn load_checked(path: &PathBuf) -> Result<(config::PipelineConfig, Vec<u8>), u8> {
    let (cfg, bytes) = config::load(path).map_err(|msg| {
        eprintln!("config error: {msg}");
        EXIT_CONFIG
    })?;
    let violations = config::validate(&cfg);
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("config error: {v}");
        }
        return Err(EXIT_CONFIG);
    }
    Ok((cfg, bytes))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Version => {
            println!("asca {}", env!("CARGO_PKG_VERSION"));
            ExitCode::SUCCESS
        }
        Command::Validate { config: path } => match load_checked(&path) {
            Ok(_) => {
                println!("ok: {}", path.display());
                ExitCode::SUCCESS
            }
            Err(code) => ExitCode::from(code),
        },
        Command::Run { config: path, output } => {
            let (cfg, bytes) = match load_checked(&path) {
                Ok(pair) => pair,
                Err(code) => return ExitCode::from(code),
            };
            match pipeline::run(&cfg, &bytes, output.as_deref()) {
                Ok(outcome) => {
                    println!("wrote {} files to {}", outcome.files.len(), outcome.out_dir.display());
                    print!("{}", outcome.table.to_text());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_DATA)
                }
            }
        }
    }
}
