//! Moment generating functions of PLDs and the worst-case error budget of the
//! FFT approximation.
//!
//! The grid sum misses three things: mass of the composition above `L`
//! (tail), cross terms dropped when each convolution is truncated to
//! `[-L, L)` (truncation), and mass that wraps around when the distribution
//! is treated as `2L`-periodic (periodisation). Each is bounded with Chernoff
//! bounds on the log-MGFs `alpha+(lambda) = ln E[e^(lambda w)]` and
//! `alpha-(lambda) = ln E[e^(-lambda w)]`.

use std::f64::consts::PI;

use statrs::function::erf::erfc;

use crate::error::{PldError, Result};
use crate::grid::{GridPld, GridSpec};
use crate::pld::{Atom, AtomicPld};

/// Log-MGFs of a PLD at one `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MgfPair {
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    pub lambda: f64,
}

/// The three error components and their combined bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBudget {
    pub tail: f64,
    pub truncation: f64,
    pub periodisation: f64,
    /// Combined bound applied to the grid approximation. It is at least
    /// `tail + truncation + periodisation`.
    pub total: f64,
    pub lambda_used: f64,
}

/// `ln sum_i e^(x_i)` without overflow. Returns `-inf` for an empty input.
pub(crate) fn log_sum_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max == f64::INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn mgf_of_atoms(atoms: &[Atom], lambda: f64) -> Result<MgfPair> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(PldError::InvalidParameter(format!(
            "lambda must be non-negative and finite, got {lambda}"
        )));
    }
    let pos: Vec<&Atom> = atoms.iter().filter(|a| a.mass > 0.0).collect();
    if pos.is_empty() {
        return Err(PldError::InvalidDistribution("PLD has no finite atoms".into()));
    }
    let alpha_plus = log_sum_exp(pos.iter().map(|a| lambda * a.loss + a.mass.ln()));
    let alpha_minus = log_sum_exp(pos.iter().map(|a| -lambda * a.loss + a.mass.ln()));
    Ok(MgfPair {
        alpha_plus,
        alpha_minus,
        lambda,
    })
}

/// Log-MGFs of the finite atoms of an exact PLD.
pub fn mgf(pld: &AtomicPld, lambda: f64) -> Result<MgfPair> {
    mgf_of_atoms(pld.atoms(), lambda)
}

/// Log-MGFs of a grid PLD, summed over its non-zero cells.
pub fn mgf_grid(pld: &GridPld, lambda: f64) -> Result<MgfPair> {
    mgf_of_atoms(&pld.atoms().collect::<Vec<_>>(), lambda)
}

/// Chernoff bound `e^(k alpha+ - lambda L)` on the mass of the k-fold
/// composition above `L`. Saturates at `+inf`.
pub fn chernoff_tail(k: u64, alpha_plus: f64, lambda: f64, half_width: f64) -> f64 {
    (k as f64 * alpha_plus - lambda * half_width).exp()
}

/// `ln sum_{l=1}^{m} e^(l alpha)`, stable for any sign of `alpha`.
pub(crate) fn log_geometric_sum(alpha: f64, m: u64) -> f64 {
    if m == 0 {
        return f64::NEG_INFINITY;
    }
    let mf = m as f64;
    if alpha.exp_m1().abs() < 1e-14 {
        // sum of e^(l alpha) = m + alpha m (m + 1) / 2 + O(alpha^2)
        return mf.ln() + alpha * (mf + 1.0) / 2.0;
    }
    if alpha > 0.0 {
        mf * alpha + (-(-mf * alpha).exp_m1()).ln() - (-(-alpha).exp_m1()).ln()
    } else {
        alpha + (-(mf * alpha).exp_m1()).ln() - (-alpha.exp_m1()).ln()
    }
}

/// Worst-case error of the FFT grid approximation of a k-fold composition.
///
/// With `x = lambda L` and `r = e^-x / (1 - e^-x)`:
///
/// * tail `e^(k a+) e^-x`
/// * truncation `(sum_{l<k} e^(l a+) + sum_{l<k} e^(l a-)) e^-x`
/// * periodisation `(e^(k a+) + e^(k a-)) r`
/// * total `(2 e^(k a+) + e^(k a-) + sum_{l<k} e^(l a+) + sum_{l<k} e^(l a-)) r`
///
/// where the sums run over `l = 1..k-1`.
pub fn total_error_bound(k: u64, mgf: &MgfPair, half_width: f64) -> Result<ErrorBudget> {
    let x = mgf.lambda * half_width;
    if !(x > 0.0) {
        return Err(PldError::InvalidParameter(format!(
            "lambda * L must be positive, got {x}"
        )));
    }
    let kf = k as f64;
    let (ap, am) = (mgf.alpha_plus, mgf.alpha_minus);
    let geo_plus = log_geometric_sum(ap, k - 1);
    let geo_minus = log_geometric_sum(am, k - 1);
    let log_ratio = -x - (-(-x).exp_m1()).ln();

    let tail = (kf * ap - x).exp();
    let truncation = (log_sum_exp([geo_plus, geo_minus]) - x).exp();
    let periodisation = (log_sum_exp([kf * ap, kf * am]) + log_ratio).exp();
    let total = (log_sum_exp([kf * ap + 2f64.ln(), kf * am, geo_plus, geo_minus]) + log_ratio).exp();
    Ok(ErrorBudget {
        tail,
        truncation,
        periodisation,
        total,
        lambda_used: mgf.lambda,
    })
}

/// Bounds on the log-MGFs of the left- and right-snapped distributions given
/// only the MGFs of the exact PLD. Returns `(left, right)`.
///
/// Snapping down can only lower `E[e^(lambda w)]` and inflates
/// `E[e^(-lambda w)]` by at most `1 / (1 - lambda dx)`; snapping up mirrors
/// this.
pub fn snapped_mgf_bounds(exact: &MgfPair, grid: GridSpec) -> Result<(MgfPair, MgfPair)> {
    let lambda = exact.lambda;
    let product = lambda * grid.dx();
    if !(lambda > 0.0) || product >= 1.0 {
        return Err(PldError::InvalidParameter(format!(
            "lambda must satisfy 0 < lambda < 1/dx = {}; lower lambda or raise n",
            1.0 / grid.dx()
        )));
    }
    let inflation = -(-product).ln_1p();
    let left = MgfPair {
        alpha_plus: exact.alpha_plus,
        alpha_minus: exact.alpha_minus + inflation,
        lambda,
    };
    let right = MgfPair {
        alpha_plus: exact.alpha_plus + inflation,
        alpha_minus: exact.alpha_minus,
        lambda,
    };
    Ok((left, right))
}

/// Sign of the MGF argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgfSign {
    Plus,
    Minus,
}

/// `C = sigma^2 ln(1/(2q)) - 1/2`, the offset in the Gaussian tail bound of
/// the subsampled Gaussian PLD for `s >= 1`.
pub fn subsampled_gaussian_tail_constant(q: f64, sigma: f64) -> f64 {
    sigma * sigma * (1.0 / (2.0 * q)).ln() - 0.5
}

/// Upper bound on `ln erfc(z)`. Exact (to libm accuracy) where `erfc` is
/// representable, and the bound `erfc(z) <= e^(-z^2) / (z sqrt(pi))`
/// beyond that.
fn ln_erfc_upper(z: f64) -> f64 {
    if z < 25.0 {
        erfc(z).ln()
    } else {
        -z * z - (z * PI.sqrt()).ln()
    }
}

/// Correction added to the truncated MGF sum of a discretized subsampled
/// Gaussian PLD to cover the cells beyond `L`:
///
/// `e^(c lambda L) (2/sqrt(pi)) e^(-lambda (2C - lambda) / (2 sigma^2))
///  erfc(((1 - c) sigma^2 L + C - lambda) / (sqrt(2) sigma))`
///
/// with `c = dx / L`.
pub fn subsampled_gaussian_mgf_correction(q: f64, sigma: f64, grid: GridSpec, lambda: f64) -> Result<f64> {
    check_subsampled_gaussian_preconditions(q, sigma, grid, lambda)?;
    let l = grid.half_width();
    let c = grid.dx() / l;
    let big_c = subsampled_gaussian_tail_constant(q, sigma);
    let s2 = sigma * sigma;
    let z = ((1.0 - c) * s2 * l + big_c - lambda) / (std::f64::consts::SQRT_2 * sigma);
    let ln_err = c * lambda * l + (2.0 / PI.sqrt()).ln() - lambda * (2.0 * big_c - lambda) / (2.0 * s2)
        + ln_erfc_upper(z);
    Ok(ln_err.exp())
}

pub(crate) fn check_subsampled_gaussian_preconditions(
    q: f64,
    sigma: f64,
    grid: GridSpec,
    lambda: f64,
) -> Result<()> {
    let l = grid.half_width();
    if !(sigma >= 1.0) {
        return Err(PldError::InvalidParameter(format!(
            "subsampled Gaussian error analysis needs sigma >= 1, got {sigma}"
        )));
    }
    if !(q > 0.0 && q <= 0.5) {
        return Err(PldError::InvalidParameter(format!(
            "subsampled Gaussian error analysis needs 0 < q <= 1/2, got {q}"
        )));
    }
    if !(lambda > 0.0 && lambda <= l) {
        return Err(PldError::InvalidParameter(format!(
            "subsampled Gaussian error analysis needs 0 < lambda <= L, got lambda={lambda}, L={l}"
        )));
    }
    if !(grid.dx() < l) {
        return Err(PldError::InvalidParameter(format!(
            "subsampled Gaussian error analysis needs dx < L, got dx={}",
            grid.dx()
        )));
    }
    if !(l > (1.0 - q).ln().abs()) {
        return Err(PldError::InvalidParameter(format!(
            "subsampled Gaussian error analysis needs L > |ln(1 - q)| = {}",
            (1.0 - q).ln().abs()
        )));
    }
    Ok(())
}

/// Upper bound on `E[e^(+-lambda w)]` of the infinitely extended grid
/// discretization whose restriction to `[-L, L)` is `discretized`.
pub fn subsampled_gaussian_mgf_bound(
    q: f64,
    sigma: f64,
    discretized: &GridPld,
    lambda: f64,
    sign: MgfSign,
) -> Result<f64> {
    let correction = subsampled_gaussian_mgf_correction(q, sigma, discretized.grid(), lambda)?;
    let m = mgf_grid(discretized, lambda)?;
    let alpha = match sign {
        MgfSign::Plus => m.alpha_plus,
        MgfSign::Minus => m.alpha_minus,
    };
    Ok(alpha.exp() + correction)
}

/// Log-MGF pair of the extended discretization, including the tail
/// correction on both signs.
pub(crate) fn subsampled_gaussian_mgf_pair(
    q: f64,
    sigma: f64,
    discretized: &GridPld,
    lambda: f64,
) -> Result<MgfPair> {
    let correction = subsampled_gaussian_mgf_correction(q, sigma, discretized.grid(), lambda)?;
    let m = mgf_grid(discretized, lambda)?;
    Ok(MgfPair {
        alpha_plus: log_sum_exp([m.alpha_plus, correction.ln()]),
        alpha_minus: log_sum_exp([m.alpha_minus, correction.ln()]),
        lambda,
    })
}

/// Strict bracket on the tight delta of the k-fold composition of `pld` at
/// `eps`, using the grid and `lambda` (default `L / 2`).
pub fn strict_delta_bounds(
    pld: &AtomicPld,
    grid: GridSpec,
    k: u64,
    eps: f64,
    lambda: Option<f64>,
) -> Result<crate::pld::PrivacyBound> {
    Ok(crate::accountant::GridBounds::from_atomic(pld, grid, k, lambda)?.bound(eps))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rr_pld() -> AtomicPld {
        let c = 3f64.ln();
        AtomicPld::new(vec![Atom::new(-c, 0.25), Atom::new(c, 0.75)], 0.0).unwrap()
    }

    #[test]
    fn point_mass_mgf() {
        let pld = AtomicPld::new(vec![Atom::new(0.2, 1.0)], 0.0).unwrap();
        let m = mgf(&pld, 2.0).unwrap();
        assert!((m.alpha_plus - 0.4).abs() < 1e-15);
        assert!((m.alpha_minus + 0.4).abs() < 1e-15);
        let zero = AtomicPld::new(vec![Atom::new(0.0, 1.0)], 0.0).unwrap();
        let m = mgf(&zero, 3.0).unwrap();
        assert_eq!((m.alpha_plus, m.alpha_minus), (0.0, 0.0));
    }

    #[test]
    fn rr_mgf_two_term_sum() {
        let m = mgf(&rr_pld(), 1.0).unwrap();
        let expected: f64 = 0.75 * 3.0 + 0.25 / 3.0;
        assert!((m.alpha_plus - expected.ln()).abs() < 1e-14);
        assert!((expected - 2.333_333_333_333_333).abs() < 1e-12);
    }

    #[test]
    fn mgf_at_zero_is_log_mass() {
        let pld = AtomicPld::new(vec![Atom::new(-1.0, 0.3), Atom::new(2.0, 0.5)], 0.2).unwrap();
        let m = mgf(&pld, 0.0).unwrap();
        assert!((m.alpha_plus - 0.8f64.ln()).abs() < 1e-15);
        assert!((m.alpha_minus - 0.8f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn mgf_survives_large_exponents() {
        let pld = AtomicPld::new(vec![Atom::new(50.0, 0.5), Atom::new(-50.0, 0.5)], 0.0).unwrap();
        let m = mgf(&pld, 30.0).unwrap();
        assert!((m.alpha_plus - (1500.0 + 0.5f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn empty_pld_is_rejected() {
        let pld = AtomicPld::new(vec![], 1.0).unwrap();
        assert!(mgf(&pld, 1.0).is_err());
    }

    #[test]
    fn chernoff_examples() {
        assert!((chernoff_tail(1, 0.0, 1.0, 10.0) - (-10f64).exp()).abs() < 1e-20);
        assert!((chernoff_tail(0, 5.0, 2.0, 3.0) - (-6f64).exp()).abs() < 1e-18);
        let a = (7.0f64 / 3.0).ln();
        let got = chernoff_tail(10, a, 1.0, 20.0);
        assert!((got.ln() - (10.0 * a - 20.0)).abs() < 1e-12);
        assert!((got.ln() + 11.53).abs() < 0.01);
    }

    #[test]
    fn geometric_sum_matches_direct_summation() {
        for &alpha in &[-3.0, -0.7, -1e-16, 0.0, 1e-16, 1e-9, 0.4, 2.5] {
            for m in [1u64, 2, 5, 40] {
                let direct: f64 = (1..=m).map(|l| (l as f64 * alpha).exp()).sum();
                let got = log_geometric_sum(alpha, m).exp();
                assert!(((got - direct) / direct).abs() < 1e-12, "alpha={alpha} m={m}: {got} vs {direct}");
            }
        }
    }

    #[test]
    fn degenerate_alpha_uses_series_limit() {
        let m = MgfPair {
            alpha_plus: 0.0,
            alpha_minus: 0.0,
            lambda: 1.0,
        };
        for k in [1u64, 2, 7, 100] {
            let b = total_error_bound(k, &m, 20.0).unwrap();
            let r = (-20f64).exp() / (1.0 - (-20f64).exp());
            // 2 + 1 + (k - 1) + (k - 1) terms of e^0.
            let direct = (2.0 + 1.0 + 2.0 * (k as f64 - 1.0)) * r;
            assert!(((b.total - direct) / direct).abs() < 1e-12);
        }
    }

    #[test]
    fn total_matches_closed_form_and_dominates_components() {
        let m = mgf(&rr_pld(), 2.0).unwrap();
        let (ap, am) = (m.alpha_plus, m.alpha_minus);
        let k = 8u64;
        let kf = k as f64;
        let l = 20.0;
        let b = total_error_bound(k, &m, l).unwrap();
        let closed = ((2.0 * ((kf + 1.0) * ap).exp() - (kf * ap).exp() - ap.exp()) / (ap.exp() - 1.0)
            + (((kf + 1.0) * am).exp() - am.exp()) / (am.exp() - 1.0))
            * (-l * 2.0f64).exp()
            / (1.0 - (-l * 2.0f64).exp());
        assert!(((b.total - closed) / closed).abs() < 1e-12);
        assert!(b.total >= (b.tail + b.truncation + b.periodisation) * (1.0 - 1e-12));
        assert!(b.tail >= 0.0 && b.truncation >= 0.0 && b.periodisation >= 0.0);
    }

    #[test]
    fn total_vanishes_as_l_grows() {
        let m = mgf(&rr_pld(), 1.0).unwrap();
        let small = total_error_bound(5, &m, 20.0).unwrap().total;
        let large = total_error_bound(5, &m, 200.0).unwrap().total;
        assert!(large < small * 1e-70);
    }

    #[test]
    fn inflation_factor() {
        let grid = GridSpec::new(1.0, 4).unwrap();
        let exact = MgfPair {
            alpha_plus: 0.3,
            alpha_minus: 0.1,
            lambda: 1.0,
        };
        let (l, r) = snapped_mgf_bounds(&exact, grid).unwrap();
        assert!((l.alpha_minus - 0.1 - 2f64.ln()).abs() < 1e-15);
        assert_eq!(l.alpha_plus, 0.3);
        assert!((r.alpha_plus - 0.3 - 2f64.ln()).abs() < 1e-15);
        assert_eq!(r.alpha_minus, 0.1);
        let too_big = MgfPair { lambda: 2.0, ..exact };
        assert!(snapped_mgf_bounds(&too_big, grid).is_err());
    }

    #[test]
    fn tail_constant() {
        let c = subsampled_gaussian_tail_constant(0.02, 2.0);
        assert!((c - (4.0 * 25f64.ln() - 0.5)).abs() < 1e-12);
        assert!((c - 12.3756).abs() < 1e-4);
    }

    #[test]
    fn mgf_correction_is_negligible_and_decays() {
        let grid = GridSpec::new(8.0, 100_000).unwrap();
        let err = subsampled_gaussian_mgf_correction(0.02, 2.0, grid, 4.0).unwrap();
        assert!(err < 1e-30, "{err}");
        let g2 = GridSpec::new(2.0, 1000).unwrap();
        let g3 = GridSpec::new(3.0, 1000).unwrap();
        let e2 = subsampled_gaussian_mgf_correction(0.02, 1.0, g2, 1.0).unwrap();
        let e3 = subsampled_gaussian_mgf_correction(0.02, 1.0, g3, 1.0).unwrap();
        assert!(e3 < e2);
    }

    #[test]
    fn subsampled_preconditions_are_named() {
        let grid = GridSpec::new(8.0, 1000).unwrap();
        let msg = |r: Result<f64>| r.unwrap_err().to_string();
        assert!(msg(subsampled_gaussian_mgf_correction(0.02, 0.5, grid, 4.0)).contains("sigma >= 1"));
        assert!(msg(subsampled_gaussian_mgf_correction(0.7, 2.0, grid, 4.0)).contains("q <= 1/2"));
        assert!(msg(subsampled_gaussian_mgf_correction(0.02, 2.0, grid, 9.0)).contains("lambda <= L"));
        let narrow = GridSpec::new(0.01, 1000).unwrap();
        assert!(msg(subsampled_gaussian_mgf_correction(0.02, 2.0, narrow, 0.005)).contains("ln(1 - q)"));
    }

    #[test]
    fn ln_erfc_bound_is_continuous_enough() {
        let below = ln_erfc_upper(24.999_999);
        let above = ln_erfc_upper(25.0);
        assert!(above >= below - 1e-3);
        assert!((above - below).abs() < 0.01);
    }
}
