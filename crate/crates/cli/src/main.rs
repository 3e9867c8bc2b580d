use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use magplasma::diagnostics::DecayModel;
use magplasma::scenario::{execute, fit_csv, load, Mode};
use magplasma::Error;

#[derive(Parser)]
#[command(name = "magplasma", version, about = "Magnetized cold plasma simulator")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Parse and validate a scenario without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Time-domain run (`simulate` or `decay_study` scenarios).
    Simulate(RunArgs),
    /// Spectrum and resolvent scan of a slab operator.
    Probe(RunArgs),
    /// Convergence toward the time-harmonic regime.
    Harmonic(RunArgs),
    /// Offline decay fit on an existing CSV.
    Fit {
        #[arg(long)]
        csv: PathBuf,
        /// Column to fit; defaults to `err_X` when present, otherwise `E_total`.
        #[arg(long)]
        column: Option<String>,
        #[arg(long, default_value = "t")]
        time_column: String,
        #[arg(long, value_enum, default_value_t = FitModel::Poly)]
        model: FitModel,
        /// Fit window `t0 t1`.
        #[arg(long, num_args = 2)]
        window: Option<Vec<f64>>,
        /// Write the fit JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON, or the manifest of an earlier run.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the manifest's count or 1.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitModel {
    Poly,
    Exp,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } => 2,
        Error::Validation(_) | Error::UnsupportedFace(_) | Error::CflViolation { .. } | Error::ZeroExternalField { .. } => 3,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => 4,
        _ => 5,
    }
}

fn run_verb(args: RunArgs, allowed: &[Mode], verb: &str) -> magplasma::Result<()> {
    let loaded = load(&args.scenario)?;
    let mut sc = loaded.scenario;
    if !allowed.contains(&sc.mode) {
        return Err(Error::Validation(format!("scenario mode {:?} cannot be run with `{verb}`", sc.mode)));
    }
    if let Some(seed) = args.seed {
        sc.seed = seed;
    }
    let threads = args.threads.or(loaded.threads).unwrap_or(1);
    let out = args.out.or_else(|| sc.output.dir.clone().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
    let m = execute(&sc, &out, threads)?;
    println!("wrote {} ({} files, {:.2} s)", out.join("manifest.json").display(), m.outputs.len(), m.wall_time_s);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.verb {
        Verb::Validate { scenario } => load(&scenario).and_then(|l| {
            let s = l.scenario.summary()?;
            println!("{}", serde_json::to_string_pretty(&s)?);
            Ok(())
        }),
        Verb::Simulate(a) => run_verb(a, &[Mode::Simulate, Mode::DecayStudy], "simulate"),
        Verb::Probe(a) => run_verb(a, &[Mode::Probe], "probe"),
        Verb::Harmonic(a) => run_verb(a, &[Mode::Harmonic], "harmonic"),
        Verb::Fit { csv, column, time_column, model, window, out } => (|| {
            let column = match column {
                Some(c) => c,
                None => {
                    let headers = csv::Reader::from_path(&csv)?.headers()?.clone();
                    if headers.iter().any(|h| h == "err_X") { "err_X".into() } else { "E_total".into() }
                }
            };
            let model = match model {
                FitModel::Poly => DecayModel::Poly,
                FitModel::Exp => DecayModel::Exp,
            };
            let fit = fit_csv(&csv, &time_column, &column, model, window.map(|w| (w[0], w[1])))?;
            let text = serde_json::to_string_pretty(&fit)?;
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => println!("{text}"),
            }
            Ok(())
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
