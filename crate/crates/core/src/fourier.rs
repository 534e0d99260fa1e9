//! FFT evaluation of truncated, periodised compositions of grid PLDs and the
//! grid approximation of the delta integral.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{PldError, Result};
use crate::grid::{GridPld, GridSpec};
use crate::pld::delta_infty_composed;

/// Swaps the two halves of an even-length vector.
pub fn fft_shift<T: Clone>(v: &[T]) -> Result<Vec<T>> {
    if v.len() % 2 != 0 {
        return Err(PldError::InvalidParameter(format!(
            "fft_shift needs an even length, got {}",
            v.len()
        )));
    }
    let half = v.len() / 2;
    Ok(v[half..].iter().chain(&v[..half]).cloned().collect())
}

/// Composition of grid PLDs, stored as the (possibly slightly negative,
/// from roundoff) mass vector on the shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedGridPld {
    grid: GridSpec,
    mass: Vec<f64>,
    k: u64,
    delta_inf: f64,
}

impl ComposedGridPld {
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    /// `1 - prod(1 - delta_inf_j)` over the composed mechanisms.
    pub fn delta_inf(&self) -> f64 {
        self.delta_inf
    }

    /// Most negative entry, a diagnostic for FFT roundoff.
    pub fn min_mass(&self) -> f64 {
        self.mass.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Grid approximation of delta(eps):
    /// `delta_inf + sum over x_l > eps of (1 - e^(eps - x_l)) * max(b_l, 0)`,
    /// clamped to [0, 1].
    pub fn delta_tilde(&self, eps: f64) -> f64 {
        let grid = self.grid;
        let n = grid.n();
        let start = first_index_above(grid, eps);
        let sum: f64 = (start..n)
            .map(|l| -(eps - grid.point(l)).exp_m1() * self.mass[l].max(0.0))
            .sum();
        (self.delta_inf + sum).clamp(0.0, 1.0)
    }
}

/// Smallest index `l` with `x_l > eps` (or `n` if there is none).
pub(crate) fn first_index_above(grid: GridSpec, eps: f64) -> usize {
    let n = grid.n();
    let guess = (eps / grid.dx() + (n / 2) as f64).floor();
    let mut l = if guess < 0.0 { 0 } else { (guess as usize + 1).min(n) };
    while l > 0 && grid.point(l - 1) > eps {
        l -= 1;
    }
    while l < n && grid.point(l) <= eps {
        l += 1;
    }
    l
}

fn forward_shifted(mass: &[f64], planner: &mut FftPlanner<f64>) -> Vec<Complex<f64>> {
    let n = mass.len();
    let half = n / 2;
    let mut buf: Vec<Complex<f64>> = mass[half..]
        .iter()
        .chain(&mass[..half])
        .map(|&m| Complex::new(m, 0.0))
        .collect();
    planner.plan_fft_forward(n).process(&mut buf);
    buf
}

fn inverse_shifted(mut buf: Vec<Complex<f64>>, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = buf.len();
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    let half = n / 2;
    buf[half..]
        .iter()
        .chain(&buf[..half])
        .map(|c| c.re * scale)
        .collect()
}

fn complex_powu(z: Complex<f64>, mut k: u64) -> Complex<f64> {
    let mut base = z;
    let mut acc = Complex::new(1.0, 0.0);
    while k > 0 {
        if k & 1 == 1 {
            acc *= base;
        }
        k >>= 1;
        if k > 0 {
            base *= base;
        }
    }
    acc
}

/// Shift, transform, raise elementwise to the k-th power, invert, shift back.
///
/// Always goes through the FFT, including for `k = 1`.
pub fn fft_self_convolve(mass: &[f64], k: u64) -> Result<Vec<f64>> {
    if mass.is_empty() || mass.len() % 2 != 0 {
        return Err(PldError::InvalidParameter(format!(
            "mass vector length must be even and non-zero, got {}",
            mass.len()
        )));
    }
    let mut planner = FftPlanner::new();
    let spectrum: Vec<Complex<f64>> = forward_shifted(mass, &mut planner)
        .into_iter()
        .map(|z| complex_powu(z, k))
        .collect();
    Ok(inverse_shifted(spectrum, &mut planner))
}

/// k-fold truncated, periodised self-composition of a grid PLD.
///
/// For `k = 1` the input masses are returned unchanged.
pub fn compose_self(pld: &GridPld, k: u64) -> Result<ComposedGridPld> {
    if k == 0 {
        return Err(PldError::InvalidParameter("k must be at least 1".into()));
    }
    let mass = if k == 1 {
        pld.mass().to_vec()
    } else {
        fft_self_convolve(pld.mass(), k)?
    };
    Ok(ComposedGridPld {
        grid: pld.grid(),
        mass,
        k,
        delta_inf: delta_infty_composed(pld.delta_inf(), k),
    })
}

/// Truncated, periodised composition of distinct grid PLDs on one grid.
pub fn compose_heterogeneous(plds: &[GridPld]) -> Result<ComposedGridPld> {
    let first = plds
        .first()
        .ok_or_else(|| PldError::InvalidParameter("need at least one PLD".into()))?;
    let grid = first.grid();
    if let Some(other) = plds.iter().find(|p| p.grid() != grid) {
        return Err(PldError::GridMismatch(format!(
            "expected grid L={}, n={}, found L={}, n={}",
            grid.half_width(),
            grid.n(),
            other.grid().half_width(),
            other.grid().n()
        )));
    }
    let survive: f64 = plds.iter().map(|p| 1.0 - p.delta_inf()).product();
    let delta_inf = (1.0 - survive).clamp(0.0, 1.0);
    if plds.len() == 1 {
        return Ok(ComposedGridPld {
            grid,
            mass: first.mass().to_vec(),
            k: 1,
            delta_inf,
        });
    }
    let mut planner = FftPlanner::new();
    let mut product = forward_shifted(first.mass(), &mut planner);
    for p in &plds[1..] {
        for (acc, z) in product.iter_mut().zip(forward_shifted(p.mass(), &mut planner)) {
            *acc *= z;
        }
    }
    Ok(ComposedGridPld {
        grid,
        mass: inverse_shifted(product, &mut planner),
        k: plds.len() as u64,
        delta_inf,
    })
}

/// Which end of the final bisection bracket to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InversionRole {
    /// Report the end where `delta(eps) <= target` is known to hold.
    Upper,
    /// Report the end where `delta(eps) > target` may still hold.
    Lower,
}

/// Absolute tolerance of [`epsilon_for_delta`].
pub const EPS_TOLERANCE: f64 = 1e-9;

/// Inverts a non-increasing delta(eps) curve by bisection.
///
/// Returns `lo` if `delta(lo) <= target` already holds. Otherwise bisects
/// until the bracket is narrower than [`EPS_TOLERANCE`].
pub fn epsilon_for_delta<F>(delta: F, target: f64, lo: f64, hi: f64, role: InversionRole) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(lo <= hi) {
        return Err(PldError::InvalidParameter(format!("empty eps range [{lo}, {hi}]")));
    }
    let (d_lo, d_hi) = (delta(lo), delta(hi));
    if d_lo <= target {
        return Ok(lo);
    }
    if d_hi > target {
        return Err(PldError::TargetOutOfRange {
            target,
            delta_lo: d_lo,
            delta_hi: d_hi,
        });
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > EPS_TOLERANCE {
        let mid = 0.5 * (a + b);
        if delta(mid) <= target {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(match role {
        InversionRole::Upper => b,
        InversionRole::Lower => a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pld::{Atom, AtomicPld};
    use crate::grid::snap_left;

    #[test]
    fn shift_swaps_halves() {
        assert_eq!(fft_shift(&[0, 1, 2, 3]).unwrap(), vec![2, 3, 0, 1]);
        assert_eq!(fft_shift(&['a', 'b']).unwrap(), vec!['b', 'a']);
        let v: Vec<i32> = (0..10).collect();
        assert_eq!(fft_shift(&fft_shift(&v).unwrap()).unwrap(), v);
        assert!(fft_shift(&[1, 2, 3]).is_err());
    }

    #[test]
    fn complex_power_matches_repeated_product() {
        let z = Complex::new(0.3, -0.8);
        let mut expected = Complex::new(1.0, 0.0);
        for k in 0..20u64 {
            let got = complex_powu(z, k);
            assert!((got - expected).norm() < 1e-14);
            expected *= z;
        }
    }

    #[test]
    fn fft_round_trip_k1() {
        let mass: Vec<f64> = (0..64).map(|i| ((i * 37) % 11) as f64 / 300.0).collect();
        let back = fft_self_convolve(&mass, 1).unwrap();
        for (a, b) in mass.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn point_mass_at_zero_is_identity() {
        let grid = GridSpec::new(2.0, 16).unwrap();
        let mut mass = vec![0.0; 16];
        mass[8] = 1.0;
        let pld = GridPld::new(grid, mass.clone(), 0.0).unwrap();
        let c = compose_self(&pld, 5).unwrap();
        for (i, m) in c.mass().iter().enumerate() {
            assert!((m - mass[i]).abs() < 1e-14, "index {i}: {m}");
        }
    }

    #[test]
    fn single_atom_delta_tilde() {
        let grid = GridSpec::new(2.0, 16).unwrap();
        let pld = snap_left(&AtomicPld::new(vec![Atom::new(0.5, 1.0)], 0.0).unwrap(), grid).unwrap();
        let c = compose_self(&pld, 1).unwrap();
        let expected = 1.0 - (-0.5f64).exp();
        assert!((c.delta_tilde(0.0) - expected).abs() < 1e-15);
        assert!((expected - 0.393469).abs() < 1e-6);
    }

    #[test]
    fn eps_beyond_grid_leaves_delta_inf() {
        let grid = GridSpec::new(2.0, 16).unwrap();
        let pld = snap_left(&AtomicPld::new(vec![Atom::new(1.5, 0.8)], 0.2).unwrap(), grid).unwrap();
        let c = compose_self(&pld, 3).unwrap();
        assert!((c.delta_tilde(2.0) - c.delta_inf()).abs() < 1e-15);
        assert!((c.delta_tilde(5.0) - (1.0 - 0.8f64.powi(3))).abs() < 1e-15);
    }

    #[test]
    fn first_index_uses_strict_inequality() {
        let grid = GridSpec::new(1.0, 4).unwrap();
        assert_eq!(first_index_above(grid, 0.0), 3);
        assert_eq!(first_index_above(grid, 0.1), 3);
        assert_eq!(first_index_above(grid, -5.0), 0);
        assert_eq!(first_index_above(grid, 0.5), 4);
    }

    #[test]
    fn heterogeneous_rejects_mismatched_grids() {
        let a = GridPld::new(GridSpec::new(1.0, 4).unwrap(), vec![0.0, 0.0, 1.0, 0.0], 0.0).unwrap();
        let b = GridPld::new(GridSpec::new(2.0, 4).unwrap(), vec![0.0, 0.0, 1.0, 0.0], 0.0).unwrap();
        assert!(matches!(compose_heterogeneous(&[a, b]), Err(PldError::GridMismatch(_))));
    }

    #[test]
    fn heterogeneous_single_is_identity() {
        let a = GridPld::new(GridSpec::new(1.0, 4).unwrap(), vec![0.1, 0.2, 0.3, 0.4], 0.0).unwrap();
        let c = compose_heterogeneous(std::slice::from_ref(&a)).unwrap();
        assert_eq!(c.mass(), a.mass());
    }

    #[test]
    fn inversion_round_trip_and_edges() {
        let f = |e: f64| (-(e)).exp() * 0.5;
        let target = f(1.0);
        let e = epsilon_for_delta(f, target, 0.0, 5.0, InversionRole::Upper).unwrap();
        assert!((e - 1.0).abs() <= 1e-9);
        assert_eq!(epsilon_for_delta(f, 1.0, 0.0, 5.0, InversionRole::Upper).unwrap(), 0.0);
        assert!(matches!(
            epsilon_for_delta(f, 1e-9, 0.0, 5.0, InversionRole::Upper),
            Err(PldError::TargetOutOfRange { .. })
        ));
    }
}
