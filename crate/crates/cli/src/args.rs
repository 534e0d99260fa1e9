use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Strict (eps, delta) bounds for composed mechanisms via privacy loss
/// distributions.
#[derive(Debug, Parser)]
#[command(name = "pld-acct", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Randomised response reporting the true bit with probability p.
    Rr {
        #[arg(long)]
        p: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Exponential mechanism releasing the majority bit of a counting query.
    ExpCount {
        #[arg(long, default_value_t = 0.05)]
        eps_tilde: f64,
        /// Number of zeros in the dataset.
        #[arg(long, default_value_t = 50)]
        m: u64,
        /// Dataset size.
        #[arg(long, default_value_t = 100)]
        n_total: u64,
        #[command(flatten)]
        common: Common,
    },
    /// shift + Bin(n_trials, p) against Bin(n_trials, p).
    Binomial {
        #[arg(long)]
        n_trials: u64,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long, default_value_t = 1)]
        shift: u64,
        /// Lattice spacing; labels outcomes only.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Poisson-subsampled Gaussian with sensitivity one (--q is the sampling ratio).
    SubsampledGaussian {
        #[arg(long)]
        sigma: f64,
        #[command(flatten)]
        common: Common,
    },
    /// A PLD read from a CSV file (`delta_inf=` header, then `loss,mass` rows).
    Compose {
        #[arg(long)]
        pld_file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Rr { common, .. }
            | Command::ExpCount { common, .. }
            | Command::Binomial { common, .. }
            | Command::SubsampledGaussian { common, .. }
            | Command::Compose { common, .. } => common,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Rr { .. } => "rr",
            Command::ExpCount { .. } => "exp-count",
            Command::Binomial { .. } => "binomial",
            Command::SubsampledGaussian { .. } => "subsampled-gaussian",
            Command::Compose { .. } => "compose",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("target").args(["eps", "delta", "curve"]).required(true))]
pub struct Common {
    /// Report delta bounds at this eps.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Report eps bounds for this target delta.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Number of compositions.
    #[arg(long, default_value_t = 1)]
    pub k: u64,
    /// Grid size (even). Default 2^17.
    #[arg(long)]
    pub n_grid: Option<usize>,
    /// Grid half-width. Default 20 (8 for the subsampled Gaussian).
    #[arg(long = "L")]
    pub half_width: Option<f64>,
    /// Chernoff parameter. Default L/2.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Poisson subsampling ratio.
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Cross-check against an exact or quadrature oracle where one applies.
    #[arg(long)]
    pub verify: bool,
    /// Sweep eps_min:eps_max:points.
    #[arg(long)]
    pub curve: Option<CurveSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveSpec {
    pub eps_min: f64,
    pub eps_max: f64,
    pub points: usize,
}

impl CurveSpec {
    pub fn points(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.eps_min];
        }
        let step = (self.eps_max - self.eps_min) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.eps_min + step * i as f64).collect()
    }
}

impl FromStr for CurveSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected eps_min:eps_max:points, got {s:?}"));
        }
        let num = |p: &str| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"));
        let eps_min = num(parts[0])?;
        let eps_max = num(parts[1])?;
        let points: usize = parts[2].trim().parse().map_err(|e| format!("{:?}: {e}", parts[2]))?;
        if !(eps_min >= 0.0 && eps_max >= eps_min) || points == 0 {
            return Err(format!("need 0 <= eps_min <= eps_max and points >= 1, got {s:?}"));
        }
        Ok(Self {
            eps_min,
            eps_max,
            points,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_parsing() {
        let c: CurveSpec = "0:2:3".parse().unwrap();
        assert_eq!(c.points(), vec![0.0, 1.0, 2.0]);
        assert!("1:0:3".parse::<CurveSpec>().is_err());
        assert!("0:1".parse::<CurveSpec>().is_err());
        assert!("0:1:0".parse::<CurveSpec>().is_err());
    }

    #[test]
    fn eps_and_delta_are_exclusive() {
        let r = Cli::try_parse_from(["pld-acct", "rr", "--p", "0.75", "--eps", "1", "--delta", "1e-5"]);
        assert!(r.is_err());
        let r = Cli::try_parse_from(["pld-acct", "rr", "--p", "0.75"]);
        assert!(r.is_err());
        let r = Cli::try_parse_from(["pld-acct", "rr", "--p", "0.75", "--eps", "1", "--L", "30"]);
        assert_eq!(r.unwrap().command.common().half_width, Some(30.0));
    }
}
