//! PLD constructors for randomised response, the exponential mechanism on a
//! counting query, lattice (binomial) noise with the reduction of
//! multidimensional additive noise, and the Poisson-subsampled Gaussian.

use std::f64::consts::PI;

use crate::accountant::{choose_lambda, GridBounds, MechanismBounds};
use crate::error::{PldError, Result};
use crate::error_bound::{check_subsampled_gaussian_preconditions, log_sum_exp, subsampled_gaussian_mgf_pair};
use crate::grid::{discretize_continuous, GridSpec, Side};
use crate::pld::{build_pld, Atom, AtomicPld, OutputDistribution, PrivacyBound};

/// Which neighbour plays the role of `X` in the PLD `omega_{X/Y}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    XY,
    YX,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::XY, Direction::YX];
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(PldError::InvalidParameter(format!("{name} must lie in (0, 1), got {p}")));
    }
    Ok(())
}

/// Worst-case pair of randomised response: report the true bit with
/// probability `p`.
pub fn rr_outputs(p: f64) -> Result<(OutputDistribution, OutputDistribution)> {
    check_probability("p", p)?;
    let fx = OutputDistribution::new(vec![(0.0, 1.0 - p), (1.0, p)])?;
    let fy = OutputDistribution::new(vec![(0.0, p), (1.0, 1.0 - p)])?;
    Ok((fx, fy))
}

/// Output distributions of the exponential mechanism releasing the majority
/// bit of a dataset with `m` zeros among `n_total` elements, against the
/// neighbour with one zero removed.
pub fn exp_count_outputs(eps_tilde: f64, m: u64, n_total: u64) -> Result<(OutputDistribution, OutputDistribution)> {
    if !(eps_tilde > 0.0 && eps_tilde.is_finite()) {
        return Err(PldError::InvalidParameter(format!("eps_tilde must be positive, got {eps_tilde}")));
    }
    if m < 1 || m > n_total {
        return Err(PldError::InvalidParameter(format!(
            "need 1 <= m <= n_total, got m={m}, n_total={n_total}"
        )));
    }
    let softmax = |zeros: f64, ones: f64| {
        let (a, b) = (eps_tilde * zeros, eps_tilde * ones);
        let z = log_sum_exp([a, b]);
        let p0 = (a - z).exp();
        let p1 = (b - z).exp();
        OutputDistribution::new(vec![(0.0, p0), (1.0, p1)])
    };
    let (m, n) = (m as f64, n_total as f64);
    let fx = softmax(m, n - m)?;
    let fy = softmax(m - 1.0, n - m)?;
    Ok((fx, fy))
}

/// Two-atom PLD of the exponential mechanism on a counting query.
pub fn exp_count_pld(eps_tilde: f64, m: u64, n_total: u64, direction: Direction) -> Result<AtomicPld> {
    let (fx, fy) = exp_count_outputs(eps_tilde, m, n_total)?;
    match direction {
        Direction::XY => build_pld(&fx, &fy),
        Direction::YX => build_pld(&fy, &fx),
    }
}

/// Mixture pair of Poisson subsampling with ratio `q`. Returns
/// `((mix, fy), (fy, mix))` with `mix = q fx + (1 - q) fy`.
#[allow(clippy::type_complexity)]
pub fn poisson_subsample_pair(
    fx: &OutputDistribution,
    fy: &OutputDistribution,
    q: f64,
) -> Result<((OutputDistribution, OutputDistribution), (OutputDistribution, OutputDistribution))> {
    check_probability("q", q)?;
    let mut outcomes: Vec<f64> = fx.atoms().iter().chain(fy.atoms()).map(|a| a.0).collect();
    outcomes.sort_by(f64::total_cmp);
    outcomes.dedup();
    let mix = OutputDistribution::new(
        outcomes
            .into_iter()
            .map(|t| (t, q * fx.prob(t) + (1.0 - q) * fy.prob(t)))
            .collect(),
    )?;
    Ok(((mix.clone(), fy.clone()), (fy.clone(), mix)))
}

/// Log-pmf on consecutive integers `offset, offset + 1, ...`. Entries may be
/// `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePmf {
    pub offset: i64,
    pub log_pmf: Vec<f64>,
}

impl LatticePmf {
    fn log_prob(&self, t: i64) -> f64 {
        let i = t - self.offset;
        if i < 0 || i as usize >= self.log_pmf.len() {
            f64::NEG_INFINITY
        } else {
            self.log_pmf[i as usize]
        }
    }

    fn end(&self) -> i64 {
        self.offset + self.log_pmf.len() as i64
    }

    fn shifted(&self, by: i64) -> Self {
        Self {
            offset: self.offset + by,
            log_pmf: self.log_pmf.clone(),
        }
    }
}

/// Log-pmf of `Bin(n, p)` on `0..=n`.
///
/// Built outward from the mode with compensated sums of log-ratios
/// `ln((n - j) p / ((j + 1)(1 - p)))`, then normalised.
pub fn binomial_log_pmf(n: u64, p: f64) -> Result<Vec<f64>> {
    check_probability("p", p)?;
    let len = n as usize + 1;
    let mode = (((n + 1) as f64 * p).floor() as usize).min(n as usize);
    let mut lp = vec![0.0; len];
    let ratio = |j: usize| ((n as f64 - j as f64) * p / ((j as f64 + 1.0) * (1.0 - p))).ln();

    let mut acc = Neumaier::default();
    for j in mode..n as usize {
        acc.add(ratio(j));
        lp[j + 1] = acc.value();
    }
    let mut acc = Neumaier::default();
    for j in (0..mode).rev() {
        acc.add(-ratio(j));
        lp[j] = acc.value();
    }
    let z = log_sum_exp(lp.iter().copied());
    lp.iter_mut().for_each(|v| *v -= z);
    Ok(lp)
}

/// Compensated running sum.
#[derive(Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Pair of distributions on a common integer lattice: the PLD only depends
/// on probability ratios, so the lattice spacing is carried separately.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePair {
    pub x: LatticePmf,
    pub y: LatticePmf,
}

impl LatticePair {
    /// `X = shift + Bin(n, p)` against `Y = Bin(n, p)`.
    pub fn binomial_shift(n_trials: u64, p: f64, shift: u64) -> Result<Self> {
        let noise = LatticePmf {
            offset: 0,
            log_pmf: binomial_log_pmf(n_trials, p)?,
        };
        Ok(Self {
            x: noise.shifted(shift as i64),
            y: noise,
        })
    }

    /// `(q X + (1 - q) Y, Y)`.
    pub fn poisson_subsample(&self, q: f64) -> Result<Self> {
        check_probability("q", q)?;
        let lo = self.x.offset.min(self.y.offset);
        let hi = self.x.end().max(self.y.end());
        let (lq, lr) = (q.ln(), (-q).ln_1p());
        let log_pmf = (lo..hi)
            .map(|t| log_sum_exp([lq + self.x.log_prob(t), lr + self.y.log_prob(t)]))
            .collect();
        Ok(Self {
            x: LatticePmf { offset: lo, log_pmf },
            y: self.y.clone(),
        })
    }

    /// PLD in the given direction.
    ///
    /// Outcomes whose probability underflows to zero under the numerator
    /// distribution are dropped for `Side::Lower` and charged to the
    /// infinite-loss mass for `Side::Upper`.
    pub fn pld(&self, direction: Direction, side: Side) -> Result<AtomicPld> {
        let (num, den) = match direction {
            Direction::XY => (&self.x, &self.y),
            Direction::YX => (&self.y, &self.x),
        };
        let mut atoms = Vec::new();
        let mut delta_inf = 0.0;
        let mut underflowed = 0u64;
        for t in num.offset..num.end() {
            let lx = num.log_prob(t);
            if lx == f64::NEG_INFINITY {
                continue;
            }
            let mass = lx.exp();
            if mass == 0.0 {
                underflowed += 1;
                continue;
            }
            let ly = den.log_prob(t);
            if ly == f64::NEG_INFINITY {
                delta_inf += mass;
            } else {
                atoms.push(Atom::new(lx - ly, mass));
            }
        }
        if side == Side::Upper && underflowed > 0 {
            // Each dropped mass is below the smallest subnormal.
            delta_inf += underflowed as f64 * f64::from_bits(1);
        }
        AtomicPld::new(atoms, delta_inf.clamp(0.0, 1.0))
    }

    /// Output distributions with outcome `t` labelled `t * scale`.
    pub fn outputs(&self, scale: f64) -> Result<(OutputDistribution, OutputDistribution)> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(PldError::InvalidParameter(format!("scale must be positive, got {scale}")));
        }
        let to_dist = |pmf: &LatticePmf| {
            OutputDistribution::new(
                (pmf.offset..pmf.end())
                    .map(|t| (t as f64 * scale, pmf.log_prob(t).exp()))
                    .filter(|a| a.1 > 0.0)
                    .collect(),
            )
        };
        Ok((to_dist(&self.x)?, to_dist(&self.y)?))
    }
}

/// `X = shift + Bin(n, p)` and `Y = Bin(n, p)`, outcomes scaled by `scale`.
pub fn binomial_1d_outputs(
    n_trials: u64,
    p: f64,
    shift: u64,
    scale: f64,
) -> Result<(OutputDistribution, OutputDistribution)> {
    LatticePair::binomial_shift(n_trials, p, shift)?.outputs(scale)
}

/// Integer-valued noise added independently to each coordinate.
#[derive(Debug, Clone, PartialEq)]
pub enum CoordinateNoise {
    Binomial { n_trials: u64, p: f64 },
    /// Pmf on `0, 1, ..., len - 1`.
    Pmf(Vec<f64>),
}

impl CoordinateNoise {
    fn pmf(&self) -> Result<Vec<f64>> {
        match self {
            CoordinateNoise::Binomial { n_trials, p } => {
                Ok(binomial_log_pmf(*n_trials, *p)?.into_iter().map(f64::exp).collect())
            }
            CoordinateNoise::Pmf(v) => {
                if v.is_empty() || v.iter().any(|p| !(*p >= 0.0)) {
                    return Err(PldError::InvalidDistribution("noise pmf must be non-empty and non-negative".into()));
                }
                Ok(v.clone())
            }
        }
    }
}

/// Largest denominator tried when looking for a common lattice.
const MAX_DENOMINATOR: u64 = 1_000_000;
const RATIONAL_TOLERANCE: f64 = 1e-9;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn common_denominator(values: &[f64]) -> Result<(u64, Vec<i64>)> {
    for d in 1..=MAX_DENOMINATOR {
        let scaled: Vec<f64> = values.iter().map(|v| v * d as f64).collect();
        if scaled
            .iter()
            .zip(values)
            .all(|(s, v)| (s - s.round()).abs() <= RATIONAL_TOLERANCE * v.abs().max(1.0))
        {
            return Ok((d, scaled.iter().map(|s| s.round() as i64).collect()));
        }
    }
    Err(PldError::InvalidParameter(
        "sensitivity vector is not commensurable (no common denominator up to 1e6)".into(),
    ))
}

/// One-dimensional pair equivalent to adding independent lattice noise to a
/// query with sensitivity vector `delta`: `|delta|^2 + sum delta_i Z_i`
/// against `sum delta_i Z_i`.
///
/// `noise` holds either one entry (used for every coordinate) or one entry
/// per coordinate. Returns the pair and the lattice spacing.
pub fn reduce_additive_noise(delta: &[f64], noise: &[CoordinateNoise]) -> Result<(LatticePair, f64)> {
    if delta.is_empty() || delta.iter().any(|d| !d.is_finite()) {
        return Err(PldError::InvalidParameter("sensitivity vector must be non-empty and finite".into()));
    }
    if noise.len() != 1 && noise.len() != delta.len() {
        return Err(PldError::InvalidParameter(format!(
            "need 1 or {} noise descriptions, got {}",
            delta.len(),
            noise.len()
        )));
    }
    let (den, w) = common_denominator(delta)?;
    // In units of 1/den^2: weights w_i * den, shift sum w_i^2.
    let shift_units: u64 = w.iter().map(|x| x.unsigned_abs().pow(2)).sum();
    if shift_units == 0 {
        return Err(PldError::InvalidParameter("sensitivity vector is zero".into()));
    }
    let g = w
        .iter()
        .fold(shift_units, |acc, x| gcd(acc, x.unsigned_abs() * den));
    let unit = g as f64 / (den * den) as f64;
    let weights: Vec<i64> = w.iter().map(|x| x * den as i64 / g as i64).collect();
    let shift = (shift_units / g) as i64;

    let noise_for = |i: usize| if noise.len() == 1 { &noise[0] } else { &noise[i] };
    let active: Vec<usize> = (0..delta.len()).filter(|&i| weights[i] != 0).collect();
    let stride = active.iter().fold(0u64, |acc, &i| gcd(acc, weights[i].unsigned_abs()));

    let all_equal = active.iter().all(|&i| weights[i] == weights[active[0]]);
    let common_binomial = match noise_for(active[0]) {
        b @ CoordinateNoise::Binomial { .. } => active.iter().all(|&i| noise_for(i) == b).then_some(b.clone()),
        _ => None,
    };

    // Distribution of sum (weights_i / stride) Z_i.
    let base = match (all_equal, common_binomial) {
        (true, Some(CoordinateNoise::Binomial { n_trials, p })) => {
            let sign = weights[active[0]].signum();
            let total = n_trials * active.len() as u64;
            let lp = binomial_log_pmf(total, p)?;
            if sign > 0 {
                LatticePmf { offset: 0, log_pmf: lp }
            } else {
                LatticePmf {
                    offset: -(total as i64),
                    log_pmf: lp.into_iter().rev().collect(),
                }
            }
        }
        _ => {
            let mut offset = 0i64;
            let mut pmf = vec![1.0];
            for &i in &active {
                let step = weights[i] / stride as i64;
                let z = noise_for(i).pmf()?;
                let (next, shift_by) = convolve_weighted(&pmf, &z, step);
                pmf = next;
                offset += shift_by;
            }
            LatticePmf {
                offset,
                log_pmf: pmf.into_iter().map(f64::ln).collect(),
            }
        }
    };

    let pair = if shift % stride as i64 == 0 {
        LatticePair {
            x: base.shifted(shift / stride as i64),
            y: base,
        }
    } else {
        // Shift is off the noise lattice: expand both onto the unit lattice.
        let expand = |pmf: &LatticePmf, by: i64| {
            let s = stride as i64;
            let mut log_pmf = vec![f64::NEG_INFINITY; (pmf.log_pmf.len() - 1) * s as usize + 1];
            for (j, v) in pmf.log_pmf.iter().enumerate() {
                log_pmf[j * s as usize] = *v;
            }
            LatticePmf {
                offset: pmf.offset * s + by,
                log_pmf,
            }
        };
        LatticePair {
            x: expand(&base, shift),
            y: expand(&base, 0),
        }
    };
    let spacing = if shift % stride as i64 == 0 { unit * stride as f64 } else { unit };
    Ok((pair, spacing))
}

/// Pmf of `A + step * Z` on consecutive integers, with the offset shift.
fn convolve_weighted(a: &[f64], z: &[f64], step: i64) -> (Vec<f64>, i64) {
    let span = step.unsigned_abs() as usize * (z.len() - 1);
    let mut out = vec![0.0; a.len() + span];
    for (k, &pz) in z.iter().enumerate() {
        if pz == 0.0 {
            continue;
        }
        let pos = if step >= 0 {
            k * step as usize
        } else {
            span - k * step.unsigned_abs() as usize
        };
        for (j, &pa) in a.iter().enumerate() {
            out[pos + j] += pa * pz;
        }
    }
    let shift = if step >= 0 { 0 } else { -(span as i64) };
    (out, shift)
}

/// The Poisson-subsampled Gaussian mechanism with sensitivity one: mixture
/// `q N(1, sigma^2) + (1 - q) N(0, sigma^2)` against `N(0, sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsampledGaussian {
    pub q: f64,
    pub sigma: f64,
}

impl SubsampledGaussian {
    pub fn new(q: f64, sigma: f64) -> Result<Self> {
        check_probability("q", q)?;
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(PldError::InvalidParameter(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { q, sigma })
    }

    /// `ln(1 - q)`: the PLD has no mass at or below this loss.
    pub fn support_left(&self) -> f64 {
        (-self.q).ln_1p()
    }

    /// Output value whose privacy loss is `s`.
    pub fn g(&self, s: f64) -> f64 {
        self.sigma * self.sigma * (s.exp_m1() / self.q).ln_1p() + 0.5
    }

    pub fn g_prime(&self, s: f64) -> f64 {
        self.sigma * self.sigma * s.exp() / (s.exp_m1() + self.q)
    }

    /// Density of the mixture output.
    pub fn output_density(&self, t: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        let norm = (2.0 * PI * s2).sqrt();
        (self.q * (-(t - 1.0).powi(2) / (2.0 * s2)).exp() + (1.0 - self.q) * (-t * t / (2.0 * s2)).exp()) / norm
    }

    /// PLD density `omega(s) = f(g(s)) g'(s)` for `s > ln(1 - q)`, zero
    /// otherwise.
    pub fn density(&self, s: f64) -> f64 {
        if s <= self.support_left() {
            return 0.0;
        }
        let v = self.output_density(self.g(s)) * self.g_prime(s);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    }

    /// Lower and upper Riemann discretizations, composed `k` times, with the
    /// error budget of the infinitely extended discretizations.
    pub fn grid_bounds(&self, grid: GridSpec, k: u64, lambda: Option<f64>) -> Result<GridBounds> {
        let choice = choose_lambda(grid, lambda)?;
        check_subsampled_gaussian_preconditions(self.q, self.sigma, grid, choice.lambda)?;
        let density = |s: f64| self.density(s);
        let lower = discretize_continuous(density, self.support_left(), grid, Side::Lower);
        let upper = discretize_continuous(density, self.support_left(), grid, Side::Upper);
        let mgf_lower = subsampled_gaussian_mgf_pair(self.q, self.sigma, &lower, choice.lambda)?;
        let mgf_upper = subsampled_gaussian_mgf_pair(self.q, self.sigma, &upper, choice.lambda)?;
        GridBounds::from_grid_plds_with_mgf(&lower, &upper, k, choice, mgf_lower, mgf_upper)
    }
}

/// Strict bracket on delta(eps) of the k-fold subsampled Gaussian mechanism.
pub fn subsampled_gaussian_bounds(
    q: f64,
    sigma: f64,
    grid: GridSpec,
    k: u64,
    eps: f64,
    lambda: Option<f64>,
) -> Result<PrivacyBound> {
    Ok(SubsampledGaussian::new(q, sigma)?.grid_bounds(grid, k, lambda)?.bound(eps))
}

/// Mechanism configuration accepted by [`MechanismSpec::bounds`].
#[derive(Debug, Clone, PartialEq)]
pub enum MechanismSpec {
    RandomizedResponse {
        p: f64,
    },
    ExpCount {
        eps_tilde: f64,
        m: u64,
        n_total: u64,
    },
    /// `shift + Bin(n_trials, p)` against `Bin(n_trials, p)`. `scale` only
    /// labels outcomes and does not change the PLD.
    Binomial {
        n_trials: u64,
        p: f64,
        shift: u64,
        scale: f64,
    },
    SubsampledGaussian {
        q: f64,
        sigma: f64,
    },
    UserAtoms {
        pld: AtomicPld,
    },
}

impl MechanismSpec {
    /// Builds brackets over both neighbouring directions (one for user
    /// atoms and the subsampled Gaussian). `subsample` applies Poisson
    /// subsampling to the discrete mechanisms.
    pub fn bounds(&self, grid: GridSpec, k: u64, lambda: Option<f64>, subsample: Option<f64>) -> Result<MechanismBounds> {
        let strict = |plds: Vec<AtomicPld>| -> Result<MechanismBounds> {
            let dirs = plds
                .iter()
                .map(|p| GridBounds::from_atomic(p, grid, k, lambda))
                .collect::<Result<Vec<_>>>()?;
            MechanismBounds::new(dirs)
        };
        let from_outputs = |fx: OutputDistribution, fy: OutputDistribution| -> Result<MechanismBounds> {
            let pairs = match subsample {
                Some(q) => {
                    let (a, b) = poisson_subsample_pair(&fx, &fy, q)?;
                    vec![a, b]
                }
                None => vec![(fx.clone(), fy.clone()), (fy, fx)],
            };
            strict(pairs.iter().map(|(a, b)| build_pld(a, b)).collect::<Result<Vec<_>>>()?)
        };
        match self {
            MechanismSpec::RandomizedResponse { p } => {
                let (fx, fy) = rr_outputs(*p)?;
                from_outputs(fx, fy)
            }
            MechanismSpec::ExpCount { eps_tilde, m, n_total } => {
                let (fx, fy) = exp_count_outputs(*eps_tilde, *m, *n_total)?;
                from_outputs(fx, fy)
            }
            MechanismSpec::Binomial {
                n_trials, p, shift, ..
            } => {
                let mut pair = LatticePair::binomial_shift(*n_trials, *p, *shift)?;
                if let Some(q) = subsample {
                    pair = pair.poisson_subsample(q)?;
                }
                let dirs = Direction::BOTH
                    .iter()
                    .map(|&d| {
                        let lower = pair.pld(d, Side::Lower)?;
                        let upper = pair.pld(d, Side::Upper)?;
                        GridBounds::from_split_atomic_clamped(&lower, &upper, grid, k, lambda)
                    })
                    .collect::<Result<Vec<_>>>()?;
                MechanismBounds::new(dirs)
            }
            MechanismSpec::SubsampledGaussian { q, sigma } => {
                if subsample.is_some() {
                    return Err(PldError::InvalidParameter(
                        "the subsampled Gaussian takes its ratio from --q directly".into(),
                    ));
                }
                MechanismBounds::new(vec![SubsampledGaussian::new(*q, *sigma)?.grid_bounds(grid, k, lambda)?])
            }
            MechanismSpec::UserAtoms { pld } => {
                if subsample.is_some() {
                    return Err(PldError::InvalidParameter(
                        "subsampling needs output distributions, not a bare PLD".into(),
                    ));
                }
                strict(vec![pld.clone()])
            }
        }
    }
}
