use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ecohydro::cli::{self, CliError, RunMode, Scenario};

#[derive(Parser)]
#[command(name = "ecohydro", version, about = "Hydrodynamic-like business-cycle simulator")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Overrides {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// hierarchy | self-consistent | ode-only | kinetic-init
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cells per axis (one value, or one per axis separated by commas).
    #[arg(long, value_delimiter = ',')]
    cells: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario and write CSV, summary and snapshots.
    Run(Overrides),
    /// Check constraints and lint the scenario without simulating.
    Validate(Overrides),
    /// Compare the hierarchy-mode PDE against the ODE system.
    Compare(Overrides),
    /// Spectrum, growth rate and mode fit of an aggregates CSV column.
    Analyze {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = "A")]
        column: String,
        /// 1-based component of a vector column.
        #[arg(long, default_value_t = 1)]
        component: usize,
        #[arg(long = "frequency")]
        frequencies: Vec<f64>,
        #[arg(long = "rate")]
        rates: Vec<f64>,
    },
}

fn load(o: &Overrides) -> Result<Scenario, CliError> {
    let mut s = Scenario::from_file(&o.scenario)?;
    if let Some(m) = &o.mode {
        s.mode = RunMode::parse(m).ok_or_else(|| CliError::Config(format!("unknown mode {m:?}")))?;
    }
    if let Some(seed) = o.seed {
        s.seed = seed;
    }
    if let Some(c) = &o.cells {
        s.cells = match c.len() {
            1 => vec![c[0]; s.dim()],
            n if n == s.dim() => c.clone(),
            n => return Err(CliError::Config(format!("--cells has {n} values for {} axes", s.dim()))),
        };
    }
    if let Some(out) = &o.out {
        s.out_dir = out.clone();
    }
    if s.mode == RunMode::KineticInit && s.particles == 0 && s.ensemble.is_none() {
        return Err(CliError::Config(
            "kinetic-init mode requires kinetic.particles or init.ensemble".into(),
        ));
    }
    Ok(s)
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(o) => {
            let s = load(&o)?;
            let result = cli::run(&s, &s.out_dir)?;
            print!("{}", result.summary);
            println!("\noutput written to {}", s.out_dir.display());
            Ok(())
        }
        Command::Validate(o) => {
            let s = load(&o)?;
            let (report, result) = cli::validate(&s);
            print!("{report}");
            result
        }
        Command::Compare(o) => {
            let s = load(&o)?;
            let report = cli::compare(&s)?.to_string();
            print!("{report}");
            if let Some(out) = &o.out {
                std::fs::create_dir_all(out)?;
                std::fs::write(out.join("compare.txt"), &report)?;
            }
            Ok(())
        }
        Command::Analyze {
            csv,
            column,
            component,
            frequencies,
            rates,
        } => {
            let text = std::fs::read_to_string(&csv)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", csv.display())))?;
            let report = cli::analyze(&text, &column, component.saturating_sub(1), &frequencies, &rates)?;
            print!("{report}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
