mod args;
mod report;
mod verify;

use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use rayon::prelude::*;

use pld_accountant::{AtomicPld, GridSpec, MechanismBounds, MechanismSpec, PldError, Result};

use args::{Cli, Command, Common, Format};
use report::{CurvePoint, CurveReport, Report};
use verify::Oracle;

const DEFAULT_N_GRID: usize = 1 << 17;
const DEFAULT_HALF_WIDTH: f64 = 20.0;
const DEFAULT_HALF_WIDTH_GAUSSIAN: f64 = 8.0;
const THREADS_ENV: &str = "PLD_ACCT_THREADS";

const EXIT_PRECONDITION: u8 = 2;
const EXIT_VERIFY_MISMATCH: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_PRECONDITION);
    }
    match run(&cli.command) {
        Ok(Outcome { text, verified }) => {
            print!("{text}");
            if verified {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: verification against the oracle failed");
                ExitCode::from(EXIT_VERIFY_MISMATCH)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_PRECONDITION)
        }
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|e| format!("{THREADS_ENV}={raw:?}: {e}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}

struct Outcome {
    text: String,
    verified: bool,
}

fn mechanism(command: &Command) -> Result<(MechanismSpec, Option<GridSpec>)> {
    let common = command.common();
    Ok(match command {
        Command::Rr { p, .. } => (MechanismSpec::RandomizedResponse { p: *p }, None),
        Command::ExpCount {
            eps_tilde, m, n_total, ..
        } => (
            MechanismSpec::ExpCount {
                eps_tilde: *eps_tilde,
                m: *m,
                n_total: *n_total,
            },
            None,
        ),
        Command::Binomial {
            n_trials,
            p,
            shift,
            scale,
            ..
        } => (
            MechanismSpec::Binomial {
                n_trials: *n_trials,
                p: *p,
                shift: *shift,
                scale: *scale,
            },
            None,
        ),
        Command::SubsampledGaussian { sigma, .. } => {
            let q = common.q.ok_or_else(|| {
                PldError::InvalidParameter("subsampled-gaussian needs the sampling ratio --q".into())
            })?;
            (MechanismSpec::SubsampledGaussian { q, sigma: *sigma }, None)
        }
        Command::Compose { pld_file, .. } => {
            let text = std::fs::read_to_string(pld_file)
                .map_err(|e| PldError::InvalidParameter(format!("{}: {e}", pld_file.display())))?;
            let (pld, grid) = AtomicPld::from_csv(&text)?;
            (MechanismSpec::UserAtoms { pld }, grid)
        }
    })
}

fn grid_for(command: &Command, file_grid: Option<GridSpec>) -> Result<GridSpec> {
    let common = command.common();
    let default_l = match command {
        Command::SubsampledGaussian { .. } => DEFAULT_HALF_WIDTH_GAUSSIAN,
        _ => DEFAULT_HALF_WIDTH,
    };
    let half_width = common
        .half_width
        .or(file_grid.map(|g| g.half_width()))
        .unwrap_or(default_l);
    let n = common.n_grid.or(file_grid.map(|g| g.n())).unwrap_or(DEFAULT_N_GRID);
    GridSpec::new(half_width, n)
}

/// Poisson subsampling of a discrete mechanism; the subsampled Gaussian
/// consumes `--q` itself.
fn subsample_ratio(command: &Command) -> Option<f64> {
    match command {
        Command::SubsampledGaussian { .. } => None,
        _ => command.common().q,
    }
}

fn run(command: &Command) -> Result<Outcome> {
    let start = Instant::now();
    let common = command.common();
    if common.k == 0 {
        return Err(PldError::InvalidParameter("k must be at least 1".into()));
    }
    let (spec, file_grid) = mechanism(command)?;
    let grid = grid_for(command, file_grid)?;
    let subsample = subsample_ratio(command);
    let bounds = spec.bounds(grid, common.k, common.lambda, subsample)?;
    let oracle = if common.verify {
        Some(Oracle::for_spec(&spec, common.k, subsample)?)
    } else {
        None
    };

    if let Some(curve) = common.curve {
        return run_curve(command, &bounds, oracle.as_ref(), curve.points(), start);
    }

    let mut report = Report::new(command.name(), bounds.budget(), bounds.lambda(), grid, common.k);
    report.min_mass = bounds.min_mass();
    if let Some(eps) = common.eps {
        let b = bounds.bound(eps);
        report.eps = Some(eps);
        report.delta_lower = Some(b.delta_lower);
        report.delta_upper = Some(b.delta_upper);
        if let Some(o) = &oracle {
            report.verify.push(o.check_bound(&b)?);
        }
    } else if let Some(delta) = common.delta {
        let e = bounds.epsilon(delta)?;
        report.delta = Some(delta);
        report.eps_lower = Some(e.eps_lower);
        report.eps_upper = Some(e.eps_upper);
        if let Some(o) = &oracle {
            report.verify = o.check_epsilon(common.k, delta, e.eps_lower, e.eps_upper)?;
        }
    }
    report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let verified = report.verify.iter().all(|r| r.ok);
    let text = match common.format {
        Format::Json => report.to_json() + "\n",
        Format::Csv => report.to_csv(),
    };
    Ok(Outcome { text, verified })
}

fn run_curve(
    command: &Command,
    bounds: &MechanismBounds,
    oracle: Option<&Oracle>,
    eps: Vec<f64>,
    start: Instant,
) -> Result<Outcome> {
    let common: &Common = command.common();
    let computed: Vec<_> = eps.par_iter().map(|&e| bounds.bound(e)).collect();
    let verify = match oracle {
        Some(o) => computed
            .par_iter()
            .map(|b| o.check_bound(b))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let report = CurveReport {
        mechanism: command.name(),
        points: computed.iter().map(CurvePoint::from).collect(),
        err_total: bounds.budget().total,
        lambda: bounds.lambda().lambda,
        grid: bounds.grid().into(),
        k: bounds.k(),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        verify,
    };
    let verified = report.verify.iter().all(|r| r.ok);
    let text = match common.format {
        Format::Json => report.to_json() + "\n",
        Format::Csv => report.to_csv(),
    };
    Ok(Outcome { text, verified })
}
