//! Exact privacy loss distributions built from pairs of discrete output
//! distributions.
//!
//! A privacy loss distribution (PLD) of the pair `(f_X, f_Y)` places mass
//! `f_X(t)` at `s = ln(f_X(t) / f_Y(t))` for every outcome `t` that both
//! distributions can produce. Mass of outcomes that only `f_X` can produce is
//! collected in `delta_inf`, the probability of an infinite privacy loss.

use std::fmt::Write as _;

use crate::error::{PldError, Result};
use crate::grid::GridSpec;

/// Atoms whose losses differ by less than this are merged.
pub const MERGE_TOLERANCE: f64 = 1e-12;

/// Tolerance used when checking that probabilities sum to one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

/// Default cap on intermediate atoms during exact k-fold composition.
pub const DEFAULT_ATOM_BUDGET: usize = 10_000_000;

/// A finitely supported distribution over real-valued outcomes.
///
/// Outcomes are kept sorted and unique. Outcomes are matched by exact
/// equality when two distributions are paired, so callers are responsible
/// for labelling outcomes consistently.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputDistribution {
    atoms: Vec<(f64, f64)>,
}

impl OutputDistribution {
    pub fn new(mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(PldError::InvalidDistribution("no outcomes".into()));
        }
        for &(t, p) in &atoms {
            if !t.is_finite() {
                return Err(PldError::InvalidDistribution(format!("outcome {t} is not finite")));
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(PldError::InvalidDistribution(format!(
                    "probability {p} of outcome {t} is outside [0, 1]"
                )));
            }
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = atoms.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(PldError::InvalidDistribution(format!("duplicate outcome {}", w[0].0)));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(PldError::InvalidDistribution(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { atoms })
    }

    /// Sorted `(outcome, probability)` pairs.
    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn prob(&self, outcome: f64) -> f64 {
        match self.atoms.binary_search_by(|a| a.0.total_cmp(&outcome)) {
            Ok(i) => self.atoms[i].1,
            Err(_) => 0.0,
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }
}

/// A point mass of a privacy loss distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub loss: f64,
    pub mass: f64,
}

impl Atom {
    pub fn new(loss: f64, mass: f64) -> Self {
        Self { loss, mass }
    }
}

/// A privacy loss distribution with finitely many atoms plus the mass at
/// infinite loss.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicPld {
    atoms: Vec<Atom>,
    delta_inf: f64,
}

impl AtomicPld {
    /// Builds a canonical PLD: atoms sorted by loss, near-equal losses merged,
    /// zero-mass atoms removed.
    pub fn new(atoms: Vec<Atom>, delta_inf: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&delta_inf) {
            return Err(PldError::InvalidDistribution(format!(
                "delta_inf {delta_inf} is outside [0, 1]"
            )));
        }
        for a in &atoms {
            if !a.loss.is_finite() {
                return Err(PldError::InvalidDistribution(format!("loss {} is not finite", a.loss)));
            }
            if !(a.mass >= 0.0) || !a.mass.is_finite() {
                return Err(PldError::InvalidDistribution(format!(
                    "mass {} at loss {} is negative or not finite",
                    a.mass, a.loss
                )));
            }
        }
        Ok(Self {
            atoms: canonicalize(atoms),
            delta_inf,
        })
    }

    pub(crate) fn from_canonical(atoms: Vec<Atom>, delta_inf: f64) -> Self {
        Self { atoms, delta_inf }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn delta_inf(&self) -> f64 {
        self.delta_inf
    }

    /// Mass of the finite atoms.
    pub fn finite_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    pub fn min_loss(&self) -> Option<f64> {
        self.atoms.first().map(|a| a.loss)
    }

    pub fn max_loss(&self) -> Option<f64> {
        self.atoms.last().map(|a| a.loss)
    }

    /// Tight delta of a single application at `eps`.
    pub fn delta(&self, eps: f64) -> f64 {
        hockey_stick(&self.atoms, eps) + self.delta_inf
    }

    /// Exact k-fold self-composition by repeated squaring of atom lists.
    pub fn compose_exact(&self, k: u64, budget: usize) -> Result<AtomicPld> {
        if k == 0 {
            return Err(PldError::InvalidParameter("k must be at least 1".into()));
        }
        let mut result: Option<Vec<Atom>> = None;
        let mut base = self.atoms.clone();
        let mut e = k;
        loop {
            if e & 1 == 1 {
                result = Some(match result {
                    None => base.clone(),
                    Some(r) => convolve_atoms(&r, &base, budget)?,
                });
            }
            e >>= 1;
            if e == 0 {
                break;
            }
            base = convolve_atoms(&base, &base, budget)?;
        }
        Ok(AtomicPld::from_canonical(
            result.unwrap_or_default(),
            delta_infty_composed(self.delta_inf, k),
        ))
    }

    /// Serializes to the PLD CSV interchange format.
    pub fn to_csv(&self) -> String {
        let mut out = format!("delta_inf={}\n", self.delta_inf);
        for a in &self.atoms {
            let _ = writeln!(out, "{},{}", a.loss, a.mass);
        }
        out
    }

    /// Parses the PLD CSV interchange format. An optional `grid=L,n` line is
    /// accepted after the `delta_inf` header and returned alongside the PLD.
    pub fn from_csv(text: &str) -> Result<(AtomicPld, Option<GridSpec>)> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(PldError::Parse {
            line: 1,
            msg: "missing delta_inf header".into(),
        })?;
        let delta_inf = header
            .trim()
            .strip_prefix("delta_inf=")
            .ok_or(PldError::Parse {
                line: 1,
                msg: format!("expected `delta_inf=<float>`, found `{header}`"),
            })?
            .trim()
            .parse::<f64>()
            .map_err(|e| PldError::Parse { line: 1, msg: e.to_string() })?;

        let mut grid = None;
        let mut atoms = Vec::new();
        let mut last_loss = f64::NEG_INFINITY;
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line.trim();
            if let Some(spec) = line.strip_prefix("grid=") {
                grid = Some(parse_grid_header(spec, line_no)?);
                continue;
            }
            let (s, m) = line.split_once(',').ok_or(PldError::Parse {
                line: line_no,
                msg: format!("expected `s,mass`, found `{line}`"),
            })?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| PldError::Parse { line: line_no, msg: e.to_string() })
            };
            let (loss, mass) = (parse(s)?, parse(m)?);
            if loss <= last_loss {
                return Err(PldError::Parse {
                    line: line_no,
                    msg: "losses must be strictly increasing".into(),
                });
            }
            last_loss = loss;
            atoms.push(Atom::new(loss, mass));
        }
        Ok((AtomicPld::new(atoms, delta_inf)?, grid))
    }
}

fn parse_grid_header(spec: &str, line: usize) -> Result<GridSpec> {
    let (l, n) = spec.split_once(',').ok_or(PldError::Parse {
        line,
        msg: "expected `grid=L,n`".into(),
    })?;
    let half_width = l
        .trim()
        .parse::<f64>()
        .map_err(|e| PldError::Parse { line, msg: e.to_string() })?;
    let n = n
        .trim()
        .parse::<usize>()
        .map_err(|e| PldError::Parse { line, msg: e.to_string() })?;
    GridSpec::new(half_width, n)
}

/// Sorts atoms by loss, merges losses closer than [`MERGE_TOLERANCE`] and
/// drops zero-mass atoms.
pub(crate) fn canonicalize(mut atoms: Vec<Atom>) -> Vec<Atom> {
    atoms.retain(|a| a.mass > 0.0);
    atoms.sort_by(|a, b| a.loss.total_cmp(&b.loss));
    let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
    for a in atoms {
        match merged.last_mut() {
            Some(last) if (a.loss - last.loss).abs() < MERGE_TOLERANCE => last.mass += a.mass,
            _ => merged.push(a),
        }
    }
    merged
}

fn convolve_atoms(a: &[Atom], b: &[Atom], budget: usize) -> Result<Vec<Atom>> {
    let needed = a.len() as u128 * b.len() as u128;
    if needed > budget as u128 {
        return Err(PldError::AtomBudgetExceeded { needed, budget });
    }
    let mut out = Vec::with_capacity(needed as usize);
    for x in a {
        for y in b {
            out.push(Atom::new(x.loss + y.loss, x.mass * y.mass));
        }
    }
    Ok(canonicalize(out))
}

/// `sum over s > eps of (1 - e^(eps - s)) * mass(s)`.
pub(crate) fn hockey_stick(atoms: &[Atom], eps: f64) -> f64 {
    atoms
        .iter()
        .filter(|a| a.loss > eps)
        .map(|a| -(eps - a.loss).exp_m1() * a.mass)
        .sum()
}

/// Builds the PLD of `fx` relative to `fy`.
pub fn build_pld(fx: &OutputDistribution, fy: &OutputDistribution) -> Result<AtomicPld> {
    if fx.total_mass() <= 0.0 {
        return Err(PldError::InvalidDistribution("fx has zero total mass".into()));
    }
    let mut atoms = Vec::new();
    let mut delta_inf = 0.0;
    for &(t, px) in fx.atoms() {
        if px <= 0.0 {
            continue;
        }
        let py = fy.prob(t);
        if py > 0.0 {
            atoms.push(Atom::new((px / py).ln(), px));
        } else {
            delta_inf += px;
        }
    }
    AtomicPld::new(atoms, delta_inf.min(1.0))
}

/// Exact tight delta of the k-fold composition, computed on atoms.
pub fn delta_exact(pld: &AtomicPld, eps: f64, k: u64) -> Result<f64> {
    if eps < 0.0 {
        return Err(PldError::InvalidParameter(format!("eps must be non-negative, got {eps}")));
    }
    let composed = pld.compose_exact(k, DEFAULT_ATOM_BUDGET)?;
    Ok(composed.delta(eps).clamp(0.0, 1.0))
}

/// Probability that at least one of k independent runs hits infinite loss.
pub fn delta_infty_composed(delta_inf: f64, k: u64) -> f64 {
    if delta_inf >= 1.0 {
        return 1.0;
    }
    if delta_inf <= 0.0 {
        return 0.0;
    }
    -((k as f64) * (-delta_inf).ln_1p()).exp_m1()
}

/// Strict two-sided bound on delta(eps) with the numbers that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyBound {
    pub delta_lower: f64,
    pub delta_upper: f64,
    /// Error budget charged against the grid approximations.
    pub err_bound: f64,
    /// Uncorrected grid sums on the lower and upper grid distributions.
    pub delta_tilde_lower: f64,
    pub delta_tilde_upper: f64,
    pub grid: GridSpec,
    pub k: u64,
    pub eps: f64,
}

impl PrivacyBound {
    pub fn width(&self) -> f64 {
        self.delta_upper - self.delta_lower
    }

    pub fn contains(&self, delta: f64) -> bool {
        self.delta_lower <= delta && delta <= self.delta_upper
    }
}
