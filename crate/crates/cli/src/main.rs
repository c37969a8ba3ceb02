use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lbp_core::scenario::{self, OutputFormat, RunReport, RunStatus, Scenario};
use lbp_core::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_ESTIMAND: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(
    name = "lbp",
    version,
    about = "Simulate, compute and estimate causal contrasts for scenario files"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a scenario.
    Validate(Common),
    /// Run every request in a scenario and write the report.
    Run(Common),
    /// Write the enumeration-exact sidecar for a scenario.
    Oracle(Common),
    /// Run positivity diagnostics only.
    Diagnose(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Both,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => OutputFormat::Json,
            Format::Csv => OutputFormat::Csv,
            Format::Both => OutputFormat::Both,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => EXIT_IO,
        _ => EXIT_VALIDATION,
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(e))
}

fn load(args: &Common) -> Result<Scenario, Error> {
    let mut s = scenario::load_scenario(&args.scenario)?;
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    Ok(s)
}

fn out_dir(args: &Common, s: &Scenario) -> PathBuf {
    args.out
        .clone()
        .or_else(|| s.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn print_summary(report: &RunReport) {
    for r in &report.results {
        let label = r.request.label();
        match (&r.status, &r.report, &r.positivity, &r.error) {
            (RunStatus::Ok, Some(rep), _, _) => println!(
                "[{}] {label:<20} {:<16} {:>12.6} (se {:.6})",
                r.index,
                rep.estimand.as_str(),
                rep.value,
                rep.mc_se
            ),
            (RunStatus::Ok, _, Some(p), _) => println!(
                "[{}] {label:<20} {} flagged at epsilon {}",
                r.index,
                p.flagged.len(),
                p.epsilon
            ),
            (_, _, _, Some(e)) => println!(
                "[{}] {label:<20} error ({}): {}",
                r.index, e.kind, e.message
            ),
            _ => println!("[{}] {label:<20} no output", r.index),
        }
    }
}

fn write_report(report: &RunReport, args: &Common, s: &Scenario) -> ExitCode {
    let format = args
        .format
        .map(OutputFormat::from)
        .unwrap_or(s.output.format);
    match scenario::emit_report(report, format, &out_dir(args, s)) {
        Ok(paths) => {
            for p in paths {
                eprintln!("wrote {}", p.display());
            }
            if report.has_errors() {
                ExitCode::from(EXIT_ESTIMAND)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => fail(&e),
    }
}

fn default_oracle_dir(args: &Common) -> PathBuf {
    args.scenario
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (Command::Validate(args)
    | Command::Run(args)
    | Command::Oracle(args)
    | Command::Diagnose(args)) = &cli.command;
    if let Some(n) = args.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_VALIDATION);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    }
    let s = match load(args) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    match &cli.command {
        Command::Validate(_) => {
            println!(
                "{}: ok ({} requests, horizon {}, enumeration eligible: {})",
                s.name,
                s.estimands.len(),
                s.spec().horizon,
                s.enumeration_eligible()
            );
            ExitCode::SUCCESS
        }
        Command::Run(args) => match scenario::run_scenario(&s) {
            Ok(report) => {
                print_summary(&report);
                write_report(&report, args, &s)
            }
            Err(e) => fail(&e),
        },
        Command::Diagnose(args) => match scenario::run_diagnostics(&s) {
            Ok(report) => {
                print_summary(&report);
                write_report(&report, args, &s)
            }
            Err(e) => fail(&e),
        },
        Command::Oracle(args) => {
            let sidecar = match scenario::oracle_sidecar(&s) {
                Ok(x) => x,
                Err(e) => return fail(&e),
            };
            let dir = args.out.clone().unwrap_or_else(|| default_oracle_dir(args));
            let path = dir.join(format!("{}.oracle.json", s.name));
            let written = std::fs::create_dir_all(&dir)
                .and_then(|_| std::fs::write(&path, sidecar.to_json()));
            match written {
                Ok(()) => {
                    for e in &sidecar.entries {
                        match (&e.value, &e.error) {
                            (Some(v), _) => println!("[{}] {:<20} {v:.9}", e.index, e.request),
                            (_, Some(err)) => {
                                println!("[{}] {:<20} error ({})", e.index, e.request, err.kind)
                            }
                            _ => println!("[{}] {:<20} n/a", e.index, e.request),
                        }
                    }
                    eprintln!("wrote {}", path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&Error::Io(e)),
            }
        }
    }
}
