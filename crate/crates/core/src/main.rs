use clap::{Args, Parser, Subcommand};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use pwguide::cli_io::{exit_code, export_plot_data, run, FieldFile, RunMode, RunOptions, Slice, EXIT_OK};

#[derive(Parser)]
#[command(name = "pwguide", version, about = "Radiating fields of locally perturbed periodic waveguides")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan for exceptional values and write the mode atlas.
    Modes(RunArgs),
    /// Radiating solution of the unperturbed problem.
    Unperturbed(RunArgs),
    /// Radiating solution with the local perturbation.
    Perturbed(RunArgs),
    /// Point source above the strip scattered by the perturbation.
    Pointsource(RunArgs),
    /// Identity checks with one PASS/FAIL line each.
    Validate(RunArgs),
    /// Tab-separated plot data from a field file.
    Export(ExportArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
    /// Proceed when the monotonicity condition cannot certify uniqueness.
    #[arg(long)]
    override_uniqueness: bool,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    field: PathBuf,
    /// full, full:<stride>, x1=<value> or x2=<value>
    #[arg(long, default_value = "full")]
    slice: String,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = match cli.command {
        Command::Modes(a) => (RunMode::Modes, a),
        Command::Unperturbed(a) => (RunMode::Unperturbed, a),
        Command::Perturbed(a) => (RunMode::Perturbed, a),
        Command::Pointsource(a) => (RunMode::Pointsource, a),
        Command::Validate(a) => (RunMode::Validate, a),
        Command::Export(a) => return export(a),
    };
    let opts = RunOptions { out: args.out, threads: args.threads, override_uniqueness: args.override_uniqueness };
    match run(mode, &args.scenario, &opts) {
        Ok(outcome) => {
            for c in &outcome.manifest.checks {
                println!("{} {} value={:e} limit={:e}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.limit);
            }
            for o in &outcome.manifest.outputs {
                println!("wrote {}", opts.out.join(o).display());
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn export(args: ExportArgs) -> ExitCode {
    let result = args
        .slice
        .parse::<Slice>()
        .and_then(|slice| export_plot_data(&FieldFile::read(&args.field)?, slice))
        .and_then(|table| {
            match &args.out {
                Some(p) => std::fs::write(p, table)?,
                None => std::io::stdout().write_all(table.as_bytes())?,
            }
            Ok(())
        });
    match result {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
