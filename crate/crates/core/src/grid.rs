//! Placement of privacy loss distributions on the equidistant grid
//! `x_i = -L + i * dx`, `dx = 2L / n`.
//!
//! Atomic PLDs are snapped down ([`snap_left`]) or up ([`snap_right`]) to grid
//! points, which yields distributions whose deltas bracket the exact one.
//! Continuous PLD densities are turned into lower and upper Riemann cell
//! masses by [`discretize_continuous`].

use std::fmt::Write as _;

use crate::error::{PldError, Result};
use crate::pld::{hockey_stick, Atom, AtomicPld};

/// Losses within this many grid spacings of a grid point are treated as
/// lying on it. The displacement is recorded as snap slack.
pub const ON_GRID_TOLERANCE: f64 = 1e-9;

/// Samples per cell used to locate interior extrema of a density.
const CELL_OVERSAMPLING: usize = 16;

/// Which side of the exact distribution an approximation should fall on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    /// Lower bound on delta: snap down, lower Riemann cells.
    Lower,
    /// Upper bound on delta: snap up, upper Riemann cells.
    Upper,
}

/// The grid `X_n` of half-width `L` with `n` (even) points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    half_width: f64,
    n: usize,
}

impl GridSpec {
    pub fn new(half_width: f64, n: usize) -> Result<Self> {
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(PldError::InvalidParameter(format!(
                "grid half-width L must be positive and finite, got {half_width}"
            )));
        }
        if n < 2 || n % 2 != 0 {
            return Err(PldError::InvalidParameter(format!(
                "grid size n must be even and at least 2, got {n}"
            )));
        }
        Ok(Self { half_width, n })
    }

    /// Grid of `n` points whose half-width is the value closest to
    /// `target_half_width` for which `anchor` is an exact multiple of `dx`.
    ///
    /// Useful when the PLD atoms are integer multiples of a known loss (as in
    /// randomised response), since atoms then snap to themselves.
    pub fn aligned(target_half_width: f64, n: usize, anchor: f64) -> Result<Self> {
        let anchor = anchor.abs();
        if !(anchor > 0.0) {
            return Err(PldError::InvalidParameter("alignment anchor must be non-zero".into()));
        }
        let probe = GridSpec::new(target_half_width, n)?;
        let steps = (anchor / probe.dx()).round().max(1.0);
        GridSpec::new(anchor * n as f64 / (2.0 * steps), n)
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    /// The i-th grid point. Index `n/2` is exactly zero.
    pub fn point(&self, i: usize) -> f64 {
        (i as f64 - (self.n / 2) as f64) * self.dx()
    }

    /// Largest representable loss, `L - dx`.
    pub fn max_point(&self) -> f64 {
        self.point(self.n - 1)
    }

    /// Fractional grid coordinate of `s` (0 at `-L`).
    fn coordinate(&self, s: f64) -> f64 {
        s / self.dx() + (self.n / 2) as f64
    }

    /// Snaps a loss to a grid index on the requested side. Returns the index
    /// and the displacement in the non-conservative direction (zero unless the
    /// loss was within [`ON_GRID_TOLERANCE`] of a grid point on the other side).
    fn snap_index(&self, s: f64, side: Side) -> Result<(usize, f64)> {
        let t = self.coordinate(s);
        let nearest = t.round();
        let idx = if (t - nearest).abs() <= ON_GRID_TOLERANCE {
            nearest
        } else {
            match side {
                Side::Lower => t.floor(),
                Side::Upper => t.ceil(),
            }
        };
        if idx < 0.0 || idx > (self.n - 1) as f64 {
            return Err(PldError::OutOfGrid {
                loss: s,
                lo: -self.half_width,
                hi: self.max_point(),
            });
        }
        let idx = idx as usize;
        let x = self.point(idx);
        let slack = match side {
            Side::Lower => (x - s).max(0.0),
            Side::Upper => (s - x).max(0.0),
        };
        Ok((idx, slack))
    }
}

/// A PLD whose atoms sit on the points of a grid.
///
/// Masses are non-negative. Lower-side distributions carry at most unit mass;
/// upper Riemann discretizations of continuous densities may exceed one by
/// O(dx).
#[derive(Debug, Clone, PartialEq)]
pub struct GridPld {
    grid: GridSpec,
    mass: Vec<f64>,
    delta_inf: f64,
    snap_slack: f64,
}

impl GridPld {
    pub fn new(grid: GridSpec, mass: Vec<f64>, delta_inf: f64) -> Result<Self> {
        if mass.len() != grid.n() {
            return Err(PldError::GridMismatch(format!(
                "mass vector has length {}, grid has {} points",
                mass.len(),
                grid.n()
            )));
        }
        if let Some(m) = mass.iter().find(|m| !(**m >= 0.0) || !m.is_finite()) {
            return Err(PldError::InvalidDistribution(format!("grid mass {m} is negative or not finite")));
        }
        if !(0.0..=1.0).contains(&delta_inf) {
            return Err(PldError::InvalidDistribution(format!(
                "delta_inf {delta_inf} is outside [0, 1]"
            )));
        }
        Ok(Self {
            grid,
            mass,
            delta_inf,
            snap_slack: 0.0,
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn delta_inf(&self) -> f64 {
        self.delta_inf
    }

    /// Largest distance an atom was moved in the non-conservative direction
    /// while snapping. Zero unless atoms were within rounding of a grid point.
    pub fn snap_slack(&self) -> f64 {
        self.snap_slack
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Non-zero cells as `(loss, mass)` atoms.
    pub fn atoms(&self) -> impl Iterator<Item = Atom> + '_ {
        self.mass
            .iter()
            .enumerate()
            .filter(|(_, m)| **m > 0.0)
            .map(|(i, m)| Atom::new(self.grid.point(i), *m))
    }

    pub fn to_atomic(&self) -> AtomicPld {
        AtomicPld::from_canonical(self.atoms().collect(), self.delta_inf)
    }

    /// Delta of a single application, summed directly on the grid atoms.
    pub fn delta_direct(&self, eps: f64) -> f64 {
        let atoms: Vec<Atom> = self.atoms().collect();
        hockey_stick(&atoms, eps) + self.delta_inf
    }

    /// PLD CSV with a `grid=L,n` header line.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "delta_inf={}\ngrid={},{}\n",
            self.delta_inf,
            self.grid.half_width(),
            self.grid.n()
        );
        for a in self.atoms() {
            let _ = writeln!(out, "{},{}", a.loss, a.mass);
        }
        out
    }
}

fn snap(pld: &AtomicPld, grid: GridSpec, side: Side) -> Result<GridPld> {
    let mut mass = vec![0.0; grid.n()];
    let mut slack: f64 = 0.0;
    for a in pld.atoms() {
        let (idx, s) = grid.snap_index(a.loss, side)?;
        mass[idx] += a.mass;
        slack = slack.max(s);
    }
    Ok(GridPld {
        grid,
        mass,
        delta_inf: pld.delta_inf(),
        snap_slack: slack,
    })
}

/// Moves every atom to the largest grid point not above it.
pub fn snap_left(pld: &AtomicPld, grid: GridSpec) -> Result<GridPld> {
    snap(pld, grid, Side::Lower)
}

/// Moves every atom to the smallest grid point not below it.
pub fn snap_right(pld: &AtomicPld, grid: GridSpec) -> Result<GridPld> {
    snap(pld, grid, Side::Upper)
}

pub fn snap_side(pld: &AtomicPld, grid: GridSpec, side: Side) -> Result<GridPld> {
    snap(pld, grid, side)
}

/// Brings atoms outside `[-L, L - dx]` into range without breaking the bound
/// on the given side.
///
/// Lower side: atoms above the range move down to `L - dx`, atoms below
/// `-L` are dropped. Upper side: atoms above the range become infinite loss,
/// atoms below `-L` move up to `-L`. Each change can only lower (resp. raise)
/// delta of every composition.
pub fn clamp_to_grid(pld: &AtomicPld, grid: GridSpec, side: Side) -> AtomicPld {
    let lo = grid.point(0);
    let hi = grid.max_point();
    let mut delta_inf = pld.delta_inf();
    let mut atoms = Vec::with_capacity(pld.atoms().len());
    for a in pld.atoms() {
        match side {
            Side::Lower if a.loss > hi => atoms.push(Atom::new(hi, a.mass)),
            Side::Lower if a.loss < lo => {}
            Side::Upper if a.loss > hi => delta_inf += a.mass,
            Side::Upper if a.loss < lo => atoms.push(Atom::new(lo, a.mass)),
            _ => atoms.push(*a),
        }
    }
    AtomicPld::from_canonical(crate::pld::canonicalize(atoms), delta_inf.min(1.0))
}

/// Lower (`Side::Lower`) or upper (`Side::Upper`) Riemann cell masses of a
/// continuous PLD density.
///
/// Lower cells: `c_i = dx * min over [x_i, x_{i+1}]` placed at `x_i`. Upper
/// cells: `c_i = dx * max over [x_{i-1}, x_i]` placed at `x_i`. The density is
/// taken as zero at and below `support_left`.
///
/// Extrema are located by evaluating both cell endpoints and 15 interior
/// samples, then refining around any sample that beats the endpoints. The
/// caller must supply a density that is piecewise monotone with only a few
/// turning points, so that no extremum hides between samples.
pub fn discretize_continuous<F>(density: F, support_left: f64, grid: GridSpec, side: Side) -> GridPld
where
    F: Fn(f64) -> f64,
{
    let omega = |s: f64| if s <= support_left { 0.0 } else { density(s).max(0.0) };
    let n = grid.n();
    let dx = grid.dx();
    let h = dx / CELL_OVERSAMPLING as f64;
    // Samples cover [x_{-1}, x_n] so that both cell conventions index into one
    // array; sample 16 * (i + 1) sits on grid point x_i.
    let base = grid.point(0) - dx;
    let samples: Vec<f64> = (0..=CELL_OVERSAMPLING * (n + 1))
        .map(|m| omega(base + m as f64 * h))
        .collect();

    let mass = (0..n)
        .map(|i| {
            // Lower cells use [x_i, x_{i+1}], upper cells [x_{i-1}, x_i].
            let first = match side {
                Side::Lower => CELL_OVERSAMPLING * (i + 1),
                Side::Upper => CELL_OVERSAMPLING * i,
            };
            let cell = &samples[first..=first + CELL_OVERSAMPLING];
            let a = base + first as f64 * h;
            dx * cell_extremum(&omega, a, h, cell, side)
        })
        .collect();

    GridPld {
        grid,
        mass,
        delta_inf: 0.0,
        snap_slack: 0.0,
    }
}

/// Minimum (lower side) or maximum (upper side) of `f` on the cell whose
/// equally spaced samples (spacing `h`, starting at `a`) are given.
fn cell_extremum<F: Fn(f64) -> f64>(f: &F, a: f64, h: f64, samples: &[f64], side: Side) -> f64 {
    let better = |x: f64, y: f64| match side {
        Side::Lower => x < y,
        Side::Upper => x > y,
    };
    let last = samples.len() - 1;
    let mut best_j = 0;
    for j in 1..=last {
        if better(samples[j], samples[best_j]) {
            best_j = j;
        }
    }
    let mut best = samples[best_j];
    let bracket = if best_j > 0 && best_j < last {
        Some((best_j - 1, best_j + 1))
    } else {
        // The extreme sample is an endpoint. A turning point may still hide
        // between it and its neighbour if the function moves the other way
        // right next to the endpoint.
        let (x0, inward) = if best_j == 0 { (a, h) } else { (a + last as f64 * h, -h) };
        let probe = f(x0 + inward * 1e-6);
        if better(probe, samples[best_j]) {
            Some(if best_j == 0 { (0, 1) } else { (last - 1, last) })
        } else {
            None
        }
    };
    if let Some((lo, hi)) = bracket {
        let v = golden_section(f, a + lo as f64 * h, a + hi as f64 * h, side);
        if better(v, best) {
            best = v;
        }
    }
    best
}

/// Golden-section search for the extremum of a unimodal function on [lo, hi].
fn golden_section<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64, side: Side) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let sign = match side {
        Side::Lower => 1.0,
        Side::Upper => -1.0,
    };
    let g = |x: f64| sign * f(x);
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let (mut gc, mut gd) = (g(c), g(d));
    let mut best = g(lo).min(g(hi)).min(gc).min(gd);
    while hi - lo > 1e-12 {
        if gc < gd {
            hi = d;
            d = c;
            gd = gc;
            c = hi - INV_PHI * (hi - lo);
            gc = g(c);
            best = best.min(gc);
        } else {
            lo = c;
            c = d;
            gc = gd;
            d = lo + INV_PHI * (hi - lo);
            gd = g(d);
            best = best.min(gd);
        }
    }
    sign * best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid4() -> GridSpec {
        GridSpec::new(1.0, 4).unwrap()
    }

    fn masses(g: &GridPld) -> Vec<(f64, f64)> {
        g.atoms().map(|a| (a.loss, a.mass)).collect()
    }

    #[test]
    fn grid_points() {
        let g = grid4();
        assert_eq!(g.dx(), 0.5);
        assert_eq!(g.point(0), -1.0);
        assert_eq!(g.point(3), 0.5);
        assert_eq!(g.point(2), 0.0);
        assert!(GridSpec::new(1.0, 5).is_err());
        assert!(GridSpec::new(0.0, 4).is_err());
    }

    #[test]
    fn snap_left_floors() {
        let one = AtomicPld::new(vec![Atom::new(0.3, 1.0)], 0.0).unwrap();
        assert_eq!(masses(&snap_left(&one, grid4()).unwrap()), vec![(0.0, 1.0)]);

        let on_grid = AtomicPld::new(vec![Atom::new(-0.5, 0.4)], 0.0).unwrap();
        assert_eq!(masses(&snap_left(&on_grid, grid4()).unwrap()), vec![(-0.5, 0.4)]);

        let two = AtomicPld::new(vec![Atom::new(-0.3, 0.5), Atom::new(0.3, 0.5)], 0.0).unwrap();
        assert_eq!(masses(&snap_left(&two, grid4()).unwrap()), vec![(-0.5, 0.5), (0.0, 0.5)]);
    }

    #[test]
    fn snap_right_ceils() {
        let one = AtomicPld::new(vec![Atom::new(0.3, 1.0)], 0.0).unwrap();
        assert_eq!(masses(&snap_right(&one, grid4()).unwrap()), vec![(0.5, 1.0)]);

        let top = AtomicPld::new(vec![Atom::new(0.5, 1.0)], 0.0).unwrap();
        assert_eq!(masses(&snap_right(&top, grid4()).unwrap()), vec![(0.5, 1.0)]);

        let two = AtomicPld::new(vec![Atom::new(-0.3, 0.5), Atom::new(0.3, 0.5)], 0.0).unwrap();
        assert_eq!(masses(&snap_right(&two, grid4()).unwrap()), vec![(0.0, 0.5), (0.5, 0.5)]);
    }

    #[test]
    fn out_of_range_atoms_are_rejected() {
        let high = AtomicPld::new(vec![Atom::new(0.6, 1.0)], 0.0).unwrap();
        let err = snap_right(&high, grid4()).unwrap_err();
        assert!(matches!(err, PldError::OutOfGrid { loss, .. } if loss == 0.6));
        assert!(err.to_string().contains("increase L"));
        let low = AtomicPld::new(vec![Atom::new(-1.2, 1.0)], 0.0).unwrap();
        assert!(snap_left(&low, grid4()).is_err());
    }

    #[test]
    fn delta_inf_is_preserved() {
        let pld = AtomicPld::new(vec![Atom::new(0.1, 0.7)], 0.3).unwrap();
        assert_eq!(snap_left(&pld, grid4()).unwrap().delta_inf(), 0.3);
        assert_eq!(snap_right(&pld, grid4()).unwrap().delta_inf(), 0.3);
    }

    #[test]
    fn aligned_grid_contains_anchor() {
        let ln3 = 3f64.ln();
        let g = GridSpec::aligned(20.0, 1 << 16, ln3).unwrap();
        assert!((g.half_width() - 20.0).abs() < 0.01);
        let pld = AtomicPld::new(vec![Atom::new(-ln3, 0.25), Atom::new(ln3, 0.75)], 0.0).unwrap();
        let l = snap_left(&pld, g).unwrap();
        let r = snap_right(&pld, g).unwrap();
        assert_eq!(l.mass(), r.mass());
        assert!(l.snap_slack() < 1e-12 && r.snap_slack() < 1e-12);
    }

    #[test]
    fn clamp_moves_mass_conservatively() {
        let g = grid4();
        let pld = AtomicPld::new(
            vec![Atom::new(-3.0, 0.1), Atom::new(0.2, 0.6), Atom::new(2.0, 0.3)],
            0.0,
        )
        .unwrap();
        let lower = clamp_to_grid(&pld, g, Side::Lower);
        assert_eq!(lower.atoms(), &[Atom::new(0.2, 0.6), Atom::new(0.5, 0.3)]);
        assert_eq!(lower.delta_inf(), 0.0);
        let upper = clamp_to_grid(&pld, g, Side::Upper);
        assert_eq!(upper.atoms(), &[Atom::new(-1.0, 0.1), Atom::new(0.2, 0.6)]);
        assert!((upper.delta_inf() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn constant_density_cells() {
        let g = GridSpec::new(1.0, 8).unwrap();
        for side in [Side::Lower, Side::Upper] {
            let d = discretize_continuous(|_| 0.5, -10.0, g, side);
            for m in d.mass() {
                assert!((m - 0.125).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn interior_peak_is_found() {
        // Peak at 0.1 sits strictly inside the upper cell [0, 0.25].
        let g = GridSpec::new(1.0, 8).unwrap();
        let f = |s: f64| (-(s - 0.1) * (s - 0.1) * 1e4).exp();
        let upper = discretize_continuous(f, -10.0, g, Side::Upper);
        let i = (0..8).find(|&i| (g.point(i) - 0.25).abs() < 1e-12).unwrap();
        assert!((upper.mass()[i] - 0.25).abs() < 1e-12);
        let lower = discretize_continuous(|s| -f(s) + 2.0, -10.0, g, Side::Lower);
        let j = (0..8).find(|&i| g.point(i).abs() < 1e-12).unwrap();
        assert!((lower.mass()[j] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn density_below_support_is_zero() {
        let g = GridSpec::new(1.0, 8).unwrap();
        let d = discretize_continuous(|_| 1.0, 0.1, g, Side::Lower);
        // Cell [0, 0.25] straddles the support boundary.
        let j = (0..8).find(|&i| g.point(i).abs() < 1e-12).unwrap();
        assert_eq!(d.mass()[j], 0.0);
        assert_eq!(d.mass()[j + 1], 0.25);
    }
}
