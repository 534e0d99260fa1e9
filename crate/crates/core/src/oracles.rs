//! Slow, independent reference computations used to cross-check the FFT
//! accountant.

use std::collections::HashMap;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{PldError, Result};
use crate::mechanisms::Direction;
use crate::pld::{canonicalize, Atom, AtomicPld, DEFAULT_ATOM_BUDGET};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    DirectConvolution,
    ClosedForm,
    Quadrature,
    ExhaustiveEnumeration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub reference_value: f64,
    pub method: OracleMethod,
    pub cost_note: String,
}

impl OracleReport {
    fn new(reference_value: f64, method: OracleMethod, cost_note: String) -> Self {
        Self {
            reference_value,
            method,
            cost_note,
        }
    }
}

pub const DIRECT_MAX_N: usize = 1024;
pub const DIRECT_MAX_K: u64 = 6;

/// k-fold truncated, periodised self-convolution evaluated term by term:
/// `b_i = sum_j a_j c_((i - j + n/2) mod n)`.
pub fn direct_truncated_periodised_convolution(mass: &[f64], k: u64) -> Result<Vec<f64>> {
    let n = mass.len();
    if n == 0 || n % 2 != 0 || n > DIRECT_MAX_N || k == 0 || k > DIRECT_MAX_K {
        return Err(PldError::InvalidParameter(format!(
            "direct convolution needs even n <= {DIRECT_MAX_N} and 1 <= k <= {DIRECT_MAX_K}, got n={n}, k={k}"
        )));
    }
    let mut acc = mass.to_vec();
    for _ in 1..k {
        acc = direct_pair(&acc, mass);
    }
    Ok(acc)
}

/// Truncated, periodised convolution of two mass vectors on one grid.
pub fn direct_pair(a: &[f64], c: &[f64]) -> Vec<f64> {
    let n = a.len();
    let half = n as isize / 2;
    (0..n as isize)
        .map(|i| {
            (0..n as isize)
                .map(|j| a[j as usize] * c[(i - j + half).rem_euclid(n as isize) as usize])
                .sum()
        })
        .collect()
}

/// Exact delta of the k-fold composition by sequential atom convolution.
pub fn exact_atom_convolution_delta(pld: &AtomicPld, k: u64, eps: f64) -> Result<OracleReport> {
    if k == 0 {
        return Err(PldError::InvalidParameter("k must be at least 1".into()));
    }
    let base = pld.atoms();
    let mut acc: Vec<Atom> = base.to_vec();
    for _ in 1..k {
        let needed = acc.len() as u128 * base.len() as u128;
        if needed > DEFAULT_ATOM_BUDGET as u128 {
            return Err(PldError::AtomBudgetExceeded {
                needed,
                budget: DEFAULT_ATOM_BUDGET,
            });
        }
        let mut next = Vec::with_capacity(needed as usize);
        for a in &acc {
            for b in base {
                next.push(Atom::new(a.loss + b.loss, a.mass * b.mass));
            }
        }
        acc = canonicalize(next);
    }
    let finite: f64 = acc
        .iter()
        .filter(|a| a.loss > eps)
        .map(|a| (1.0 - (eps - a.loss).exp()) * a.mass)
        .sum();
    let infinite = 1.0 - (1.0 - pld.delta_inf()).powf(k as f64);
    Ok(OracleReport::new(
        (finite + infinite).clamp(0.0, 1.0),
        OracleMethod::DirectConvolution,
        format!("{} atoms after {k} sequential convolutions", acc.len()),
    ))
}

/// Delta of randomised response with `1/2 < p < 1`:
/// `p (1 - e^(eps - c))` for `eps <= c = ln(p / (1 - p))`, else zero.
pub fn rr_closed_form_delta(p: f64, eps: f64) -> Result<OracleReport> {
    if !(p > 0.5 && p < 1.0) {
        return Err(PldError::InvalidParameter(format!(
            "closed form covers 1/2 < p < 1, got {p}"
        )));
    }
    let c = (p / (1.0 - p)).ln();
    let value = if eps <= c { p * (1.0 - (eps - c).exp()) } else { 0.0 };
    Ok(OracleReport::new(value, OracleMethod::ClosedForm, "closed form".into()))
}

// Gauss-Kronrod 7/15 nodes and weights on [-1, 1].
const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = KRONROD_WEIGHTS[7] * fc;
    let mut gauss = GAUSS_WEIGHTS[3] * fc;
    for i in 0..7 {
        let x = h * GK_NODES[i];
        let pair = f(c - x) + f(c + x);
        kronrod += KRONROD_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            gauss += GAUSS_WEIGHTS[i / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> Result<(f64, f64)> {
    let (value, err) = gauss_kronrod(f, a, b);
    if err <= tol || err <= 1e-15 * value.abs() {
        return Ok((value, err));
    }
    if depth == 0 {
        return Err(PldError::Quadrature(format!(
            "no convergence on [{a}, {b}]: estimate {value}, error {err}"
        )));
    }
    let m = 0.5 * (a + b);
    let (v1, e1) = adaptive(f, a, m, 0.5 * tol, depth - 1)?;
    let (v2, e2) = adaptive(f, m, b, 0.5 * tol, depth - 1)?;
    Ok((v1 + v2, e1 + e2))
}

/// Integral of `f` over `[a, inf)` in unit pieces, stopping once pieces
/// become negligible. Returns `(value, error estimate)`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, abs_tol: f64) -> Result<(f64, f64)> {
    const MAX_PIECES: usize = 100_000;
    const QUIET_PIECES: usize = 32;
    let mut total = 0.0;
    let mut err = 0.0;
    let mut quiet = 0;
    for i in 0..MAX_PIECES {
        let lo = a + i as f64;
        let (v, e) = adaptive(&f, lo, lo + 1.0, abs_tol.max(1e-12 * total) / 64.0, 60)?;
        total += v;
        err += e;
        if v.abs() <= 1e-17 * total.abs() || v == 0.0 {
            quiet += 1;
            if quiet >= QUIET_PIECES {
                return Ok((total, err));
            }
        } else {
            quiet = 0;
        }
    }
    Err(PldError::Quadrature(format!(
        "integrand did not become negligible after {MAX_PIECES} unit intervals"
    )))
}

/// Single-application delta of a continuous PLD:
/// `integral over s > eps of (1 - e^(eps - s)) omega(s) ds`.
pub fn continuous_delta_quadrature<F>(omega: F, support_left: f64, eps: f64) -> Result<OracleReport>
where
    F: Fn(f64) -> f64,
{
    let start = eps.max(support_left);
    let integrand = |s: f64| {
        let w = omega(s);
        if w == 0.0 {
            0.0
        } else {
            -(eps - s).exp_m1() * w
        }
    };
    let (value, err) = integrate_to_infinity(integrand, start, 1e-13)?;
    if err > 1e-10 {
        return Err(PldError::Quadrature(format!("error estimate {err} exceeds 1e-10")));
    }
    Ok(OracleReport::new(
        value.max(0.0),
        OracleMethod::Quadrature,
        format!("adaptive Gauss-Kronrod, error estimate {err:e}"),
    ))
}

/// Tight delta of the Gaussian mechanism:
/// `Phi(D / 2s - eps s / D) - e^eps Phi(-D / 2s - eps s / D)`.
pub fn analytical_gaussian_delta(sigma: f64, sensitivity: f64, eps: f64) -> Result<f64> {
    if !(sigma > 0.0 && sensitivity > 0.0) {
        return Err(PldError::InvalidParameter(format!(
            "sigma and sensitivity must be positive, got {sigma}, {sensitivity}"
        )));
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let a = sensitivity / (2.0 * sigma);
    let b = eps * sigma / sensitivity;
    Ok((std.cdf(a - b) - eps.exp() * std.cdf(-a - b)).max(0.0))
}

/// Smallest eps with `analytical_gaussian_delta(.., eps) <= delta`, by
/// bisection to 1e-12.
pub fn analytical_gaussian_epsilon(sigma: f64, sensitivity: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(PldError::InvalidParameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    if analytical_gaussian_delta(sigma, sensitivity, 0.0)? <= delta {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while analytical_gaussian_delta(sigma, sensitivity, hi)? > delta {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(PldError::InvalidParameter("target delta not reached".into()));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if analytical_gaussian_delta(sigma, sensitivity, mid)? > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

const ENUMERATION_BUDGET: u128 = 10_000_000;

/// Hockey-stick divergence `sum_t max(f_X(t) - e^eps f_Y(t), 0)` of
/// `X = delta + Z` and `Y = Z` in `R^d`, enumerating every outcome of the
/// independent per-coordinate noise `Z_i ~ noise[i]` (pmf on `0, 1, ...`).
pub fn exhaustive_additive_noise_delta(
    delta: &[f64],
    noise: &[Vec<f64>],
    eps: f64,
    direction: Direction,
) -> Result<OracleReport> {
    if delta.len() != noise.len() || delta.is_empty() {
        return Err(PldError::InvalidParameter("need one noise pmf per coordinate".into()));
    }
    let count: u128 = noise.iter().map(|p| p.len() as u128).product();
    if count > ENUMERATION_BUDGET {
        return Err(PldError::AtomBudgetExceeded {
            needed: count,
            budget: ENUMERATION_BUDGET as usize,
        });
    }
    let key = |v: &[f64]| -> Vec<i64> { v.iter().map(|x| (x * (1u64 << 30) as f64).round() as i64).collect() };
    let mut fx: HashMap<Vec<i64>, f64> = HashMap::new();
    let mut fy: HashMap<Vec<i64>, f64> = HashMap::new();
    let d = delta.len();
    let mut idx = vec![0usize; d];
    loop {
        let prob: f64 = idx.iter().zip(noise).map(|(&i, p)| p[i]).product();
        if prob > 0.0 {
            let z: Vec<f64> = idx.iter().map(|&i| i as f64).collect();
            let x: Vec<f64> = z.iter().zip(delta).map(|(z, d)| z + d).collect();
            *fy.entry(key(&z)).or_default() += prob;
            *fx.entry(key(&x)).or_default() += prob;
        }
        let mut c = 0;
        loop {
            if c == d {
                let (num, den) = match direction {
                    Direction::XY => (&fx, &fy),
                    Direction::YX => (&fy, &fx),
                };
                let scale = eps.exp();
                let value: f64 = num
                    .iter()
                    .map(|(t, p)| (p - scale * den.get(t).copied().unwrap_or(0.0)).max(0.0))
                    .sum();
                return Ok(OracleReport::new(
                    value.min(1.0),
                    OracleMethod::ExhaustiveEnumeration,
                    format!("{count} noise outcomes enumerated"),
                ));
            }
            idx[c] += 1;
            if idx[c] < noise[c].len() {
                break;
            }
            idx[c] = 0;
            c += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_identity_and_rr_square() {
        let mut v = vec![0.0; 8];
        v[4] = 1.0;
        assert_eq!(direct_truncated_periodised_convolution(&v, 3).unwrap(), v);
        // RR-like vector with atoms at +-1 grid step.
        let mut rr = vec![0.0; 8];
        rr[3] = 0.25;
        rr[5] = 0.75;
        let sq = direct_truncated_periodised_convolution(&rr, 2).unwrap();
        assert!((sq[2] - 0.0625).abs() < 1e-15);
        assert!((sq[4] - 0.375).abs() < 1e-15);
        assert!((sq[6] - 0.5625).abs() < 1e-15);
        assert!(direct_truncated_periodised_convolution(&vec![0.0; 2048], 2).is_err());
        assert!(direct_truncated_periodised_convolution(&v, 7).is_err());
    }

    #[test]
    fn exact_atoms_rr() {
        let c = 3f64.ln();
        let pld = AtomicPld::new(vec![Atom::new(-c, 0.25), Atom::new(c, 0.75)], 0.0).unwrap();
        let k2 = exact_atom_convolution_delta(&pld, 2, 0.0).unwrap().reference_value;
        let hand = 0.5625 * (1.0 - (-2.0 * c).exp());
        assert!((k2 - hand).abs() < 1e-15);
        let k1 = exact_atom_convolution_delta(&pld, 1, 0.5).unwrap().reference_value;
        assert!((k1 - rr_closed_form_delta(0.75, 0.5).unwrap().reference_value).abs() < 1e-14);
        let zero = AtomicPld::new(vec![Atom::new(0.0, 1.0)], 0.0).unwrap();
        assert_eq!(exact_atom_convolution_delta(&zero, 4, 0.1).unwrap().reference_value, 0.0);
    }

    #[test]
    fn rr_closed_form_cases() {
        assert!((rr_closed_form_delta(0.75, 0.0).unwrap().reference_value - 0.5).abs() < 1e-15);
        assert!(rr_closed_form_delta(0.75, 3f64.ln()).unwrap().reference_value.abs() < 1e-15);
        assert_eq!(rr_closed_form_delta(0.75, 2.0).unwrap().reference_value, 0.0);
        assert!(rr_closed_form_delta(0.5, 0.1).is_err());
    }

    #[test]
    fn quadrature_basics() {
        assert_eq!(continuous_delta_quadrature(|_| 0.0, 0.0, 0.5).unwrap().reference_value, 0.0);
        // Exponential density on [0, inf): int (1 - e^-s) e^-s ds = 1/2.
        let v = continuous_delta_quadrature(|s: f64| if s >= 0.0 { (-s).exp() } else { 0.0 }, 0.0, 0.0)
            .unwrap()
            .reference_value;
        assert!((v - 0.5).abs() < 1e-12);
        let far = continuous_delta_quadrature(|s: f64| (-s * s).exp(), -10.0, 40.0).unwrap();
        assert!(far.reference_value < 1e-300);
    }

    #[test]
    fn gaussian_closed_form_matches_quadrature() {
        let (sigma, sens) = (1.3, 1.0);
        // PLD of N(sens, s^2) against N(0, s^2) is N(mu, 2 mu) with
        // mu = sens^2 / (2 s^2).
        let mu = sens * sens / (2.0 * sigma * sigma);
        let var = 2.0 * mu;
        let omega = |s: f64| (-(s - mu).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
        for eps in [0.0, 0.5, 1.5] {
            let closed = analytical_gaussian_delta(sigma, sens, eps).unwrap();
            let quad = continuous_delta_quadrature(omega, -60.0, eps).unwrap().reference_value;
            assert!((closed - quad).abs() < 1e-9, "eps={eps}: {closed} vs {quad}");
        }
        let std = Normal::new(0.0, 1.0).unwrap();
        let zero = analytical_gaussian_delta(2.0, 1.0, 0.0).unwrap();
        assert!((zero - (std.cdf(0.25) - std.cdf(-0.25))).abs() < 1e-15);
        assert!(analytical_gaussian_delta(1e6, 1.0, 0.5).unwrap() < 1e-12);
    }

    #[test]
    fn gaussian_inversion_round_trip() {
        let eps = analytical_gaussian_epsilon(3.0, 1.0, 1e-4).unwrap();
        assert!((analytical_gaussian_delta(3.0, 1.0, eps).unwrap() - 1e-4).abs() < 1e-12);
    }

    #[test]
    fn exhaustive_two_dimensional_binomial() {
        let pmf = vec![0.25, 0.5, 0.25];
        let r = exhaustive_additive_noise_delta(&[1.0, 1.0], &[pmf.clone(), pmf], 0.0, Direction::XY).unwrap();
        assert!((r.reference_value - 0.625).abs() < 1e-15);
    }
}
