use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ppi_cli::commands::{self, CliError, Context, GenerateRequest, Outcome, Preset};
use ppi_core::linalg::Tolerance;

/// Construct, verify and decompose twisted power partial isometries.
///
/// Exit status: 0 on success, 1 when the mathematics fails (a relation, a
/// certificate, a residual), 2 on malformed input or usage.
#[derive(Parser)]
#[command(name = "ppi", version)]
struct Cli {
    /// Absolute residual tolerance.
    #[arg(long, global = true, default_value_t = 1e-9)]
    tol: f64,
    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    output: Option<String>,
    /// Worker threads for leaf recursions and relation checks.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Add wall-clock timing to reports (makes them run-dependent).
    #[arg(long, global = true)]
    timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check every twisted relation of a tuple document.
    Verify { input: String },
    /// Halmos–Wallen decomposition of one operator.
    Hw {
        input: String,
        /// Operator name in the document.
        #[arg(long)]
        op: String,
        #[arg(long)]
        emit_intertwiner: bool,
    },
    /// Simultaneous decomposition into tensor-model leaves, with partitions.
    Decompose {
        input: String,
        #[arg(long)]
        emit_intertwiner: bool,
    },
    /// Emit a tuple document from a preset or a model spec file.
    Generate {
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Model spec document.
        #[arg(long)]
        spec: Option<String>,
        /// Shift size for example43 and truncated-shift.
        #[arg(long, default_value_t = 2)]
        p: usize,
        /// Twist scalar for example43.
        #[arg(long, default_value = "1,0", allow_hyphen_values = true)]
        lambda: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Conjugate by a seeded random unitary.
        #[arg(long)]
        scramble: bool,
    },
    /// Dimension of the commutant of the generated *-algebra.
    Commutant { input: String },
    /// Simultaneous unitary equivalence of two tuples.
    Equiv {
        left: String,
        right: String,
        #[arg(long)]
        emit_intertwiner: bool,
    },
}

fn context(cli: &Cli, tol: Tolerance, emit_intertwiner: bool) -> Context {
    Context {
        tol,
        emit_intertwiner,
        timing: cli.timing,
    }
}

enum Done {
    Report(Outcome),
    Document(String),
}

fn run(cli: &Cli) -> Result<Done, CliError> {
    let tol = Tolerance::with_eps(cli.tol).map_err(|e| CliError::Usage(format!("--tol: {e}")))?;
    Ok(match &cli.command {
        Command::Verify { input } => {
            let (_, t) = commands::load_tuple(input)?;
            Done::Report(commands::verify(&t, &context(cli, tol, false)))
        }
        Command::Hw {
            input,
            op,
            emit_intertwiner,
        } => {
            let (doc, t) = commands::load_tuple(input)?;
            Done::Report(commands::hw(
                &doc,
                &t,
                op,
                &context(cli, tol, *emit_intertwiner),
            )?)
        }
        Command::Decompose {
            input,
            emit_intertwiner,
        } => {
            let (_, t) = commands::load_tuple(input)?;
            Done::Report(commands::decompose(
                &t,
                &context(cli, tol, *emit_intertwiner),
            ))
        }
        Command::Generate {
            preset,
            spec,
            p,
            lambda,
            seed,
            scramble,
        } => Done::Document(commands::generate(
            &GenerateRequest {
                preset: *preset,
                spec: spec.clone(),
                p: *p,
                lambda: lambda.clone(),
                seed: *seed,
                scramble: *scramble,
            },
            &tol,
        )?),
        Command::Commutant { input } => {
            let (_, t) = commands::load_tuple(input)?;
            Done::Report(commands::commutant(&t, &context(cli, tol, false)))
        }
        Command::Equiv {
            left,
            right,
            emit_intertwiner,
        } => {
            let (_, a) = commands::load_tuple(left)?;
            let (_, b) = commands::load_tuple(right)?;
            Done::Report(commands::equiv(
                &a,
                &b,
                &context(cli, tol, *emit_intertwiner),
            ))
        }
    })
}

fn emit(cli: &Cli, text: &str) -> Result<(), CliError> {
    match &cli.output {
        Some(path) => std::fs::write(path, text).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
        {
            Ok(pool) => pool.install(|| run(&cli)),
            Err(e) => Err(CliError::Usage(format!("--jobs: {e}"))),
        },
        None => run(&cli),
    };
    let (text, code) = match result {
        Ok(Done::Document(text)) => (text, 0),
        Ok(Done::Report(outcome)) => {
            if let Some(d) = &outcome.diagnostic {
                eprintln!("ppi: {d}");
            }
            let code = outcome.exit_code();
            (outcome.text, code)
        }
        Err(e) => {
            eprintln!("ppi: {e}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = emit(&cli, &text) {
        eprintln!("ppi: {e}");
        return ExitCode::from(2);
    }
    ExitCode::from(code)
}
