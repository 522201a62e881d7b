use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use desing_cli::{emit, job};
use desing_core::resolve::{resolve, Mode, Outcome, ResolveConfig};
use desing_core::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Mobile,
    Scheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EmitArg {
    Json,
    Dot,
    Both,
}

/// Resolve the singularities of an ideal in affine space over the rationals
/// by iterated chart-wise blowups, and emit the verified chart tree.
#[derive(Parser, Debug)]
#[command(name = "resolve", version, about)]
struct Cli {
    /// Job description file (vars:, J:, mode:, control:, D:, E: lines)
    #[arg(long)]
    input: PathBuf,

    /// Override the mode given in the input file
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,

    /// Override the control given in the input file
    #[arg(long)]
    control: Option<u64>,

    /// Blowup step budget (also via RESOLVE_MAX_STEPS; default 64)
    #[arg(long)]
    max_steps: Option<u64>,

    /// Which tree artifacts to write
    #[arg(long, value_enum, default_value_t = EmitArg::Json)]
    emit: EmitArg,

    /// Run the smoothness and normal crossings checks on every leaf
    #[arg(long)]
    verify: bool,

    /// Record every candidate descent in trace.json
    #[arg(long)]
    trace: bool,

    /// Seed for the candidate point sampler
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output directory (created if missing)
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Input(_) | Error::VariableMismatch { .. } => 3,
        Error::ResourceLimit(_) => 2,
        _ => 1,
    }
}

fn run(cli: &Cli) -> Result<u8, Error> {
    let text = std::fs::read_to_string(&cli.input)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", cli.input.display())))?;
    let mut spec = job::parse_job(&text)?;
    if let Some(mode) = cli.mode {
        spec.mode = match mode {
            ModeArg::Mobile => Mode::Mobile,
            ModeArg::Scheme => Mode::Scheme,
        };
        if spec.mode == Mode::Scheme {
            spec.control = 1;
        }
    }
    if let Some(c) = cli.control {
        spec.control = c;
    }
    job::validate(&spec)?;

    let max_steps = cli
        .max_steps
        .or_else(|| {
            std::env::var("RESOLVE_MAX_STEPS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(64);
    if max_steps == 0 {
        return Err(Error::Input("the step budget must be positive".into()));
    }

    let root = job::build_root(&spec)?;
    let cfg = ResolveConfig {
        mode: spec.mode,
        max_steps,
        verify: cli.verify,
        alt_picks: false,
        seed: cli.seed,
        trace: cli.trace,
    };
    let run = resolve(root, &cfg)?;

    std::fs::create_dir_all(&cli.out)
        .map_err(|e| Error::Input(format!("cannot create {}: {e}", cli.out.display())))?;
    let write = |name: &str, data: &str| -> Result<(), Error> {
        let path = cli.out.join(name);
        std::fs::write(&path, data)
            .map_err(|e| Error::Internal(format!("cannot write {}: {e}", path.display())))
    };
    if cli.emit == EmitArg::Json || cli.emit == EmitArg::Both {
        write("tree.json", &emit::tree_json(&run)?)?;
    }
    if cli.emit == EmitArg::Dot || cli.emit == EmitArg::Both {
        write("tree.dot", &emit::tree_dot(&run))?;
    }
    write("report.json", &emit::report_json(&run)?)?;
    if let Some(trace) = emit::trace_json(&run)? {
        write("trace.json", &trace)?;
    }

    let report = &run.report;
    println!(
        "{}: {} charts, {} blowups, {} rounds, verified: {}",
        match run.outcome {
            Outcome::Resolved => "resolved",
            Outcome::VerificationFailed => "verification failed",
            Outcome::BudgetExhausted => "budget exhausted",
        },
        report.leaves.len(),
        report.steps,
        report.rounds,
        report.verified
    );
    for caveat in &report.caveats {
        println!("caveat: {caveat}");
    }

    Ok(match run.outcome {
        Outcome::Resolved => {
            if report.verified {
                0
            } else {
                1
            }
        }
        Outcome::VerificationFailed => 1,
        Outcome::BudgetExhausted => 2,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
