use pld_accountant::oracles::{continuous_delta_quadrature, exact_atom_convolution_delta};
use pld_accountant::{
    build_pld, AtomicPld, Direction, LatticePair, MechanismSpec, PldError, PrivacyBound, Result, Side,
    SubsampledGaussian,
};
use pld_accountant::mechanisms::{exp_count_outputs, poisson_subsample_pair, rr_outputs};

use crate::report::VerifyRecord;

/// Slack for rounding in the oracle itself.
const ORACLE_TOLERANCE: f64 = 1e-12;

/// Reference delta(eps) as an interval: the exact value when the oracle
/// is exact, or the two sides of an underflow split.
pub struct Oracle {
    kind: OracleKind,
}

enum OracleKind {
    /// One `(lower, upper)` PLD pair per neighbouring direction.
    Atoms(Vec<(AtomicPld, AtomicPld)>),
    Quadrature(SubsampledGaussian),
    Unavailable(String),
}

impl Oracle {
    pub fn for_spec(spec: &MechanismSpec, k: u64, subsample: Option<f64>) -> Result<Self> {
        let kind = match spec {
            MechanismSpec::RandomizedResponse { p } => {
                let (fx, fy) = rr_outputs(*p)?;
                OracleKind::Atoms(output_plds(fx, fy, subsample)?)
            }
            MechanismSpec::ExpCount { eps_tilde, m, n_total } => {
                let (fx, fy) = exp_count_outputs(*eps_tilde, *m, *n_total)?;
                OracleKind::Atoms(output_plds(fx, fy, subsample)?)
            }
            MechanismSpec::Binomial {
                n_trials, p, shift, ..
            } => {
                let mut pair = LatticePair::binomial_shift(*n_trials, *p, *shift)?;
                if let Some(q) = subsample {
                    pair = pair.poisson_subsample(q)?;
                }
                let plds = Direction::BOTH
                    .iter()
                    .map(|&d| Ok((pair.pld(d, Side::Lower)?, pair.pld(d, Side::Upper)?)))
                    .collect::<Result<Vec<_>>>()?;
                OracleKind::Atoms(plds)
            }
            MechanismSpec::SubsampledGaussian { q, sigma } => {
                if k == 1 {
                    OracleKind::Quadrature(SubsampledGaussian::new(*q, *sigma)?)
                } else {
                    OracleKind::Unavailable("quadrature oracle covers k = 1 only".into())
                }
            }
            MechanismSpec::UserAtoms { pld } => OracleKind::Atoms(vec![(pld.clone(), pld.clone())]),
        };
        Ok(Self { kind })
    }

    fn method(&self) -> &'static str {
        match self.kind {
            OracleKind::Atoms(_) => "exact_atoms",
            OracleKind::Quadrature(_) => "quadrature",
            OracleKind::Unavailable(_) => "none",
        }
    }

    /// `Ok(None)` when the oracle does not apply or exceeds its budget.
    fn reference(&self, k: u64, eps: f64) -> Result<Option<(f64, f64, String)>> {
        match &self.kind {
            OracleKind::Atoms(plds) => {
                let (mut lo, mut hi) = (0.0f64, 0.0f64);
                let mut note = String::new();
                for (lower, upper) in plds {
                    let a = match exact_atom_convolution_delta(lower, k, eps) {
                        Ok(r) => r,
                        Err(PldError::AtomBudgetExceeded { .. }) => return Ok(None),
                        Err(e) => return Err(e),
                    };
                    let b = match exact_atom_convolution_delta(upper, k, eps) {
                        Ok(r) => r,
                        Err(PldError::AtomBudgetExceeded { .. }) => return Ok(None),
                        Err(e) => return Err(e),
                    };
                    lo = lo.max(a.reference_value);
                    hi = hi.max(b.reference_value);
                    note = b.cost_note;
                }
                Ok(Some((lo, hi, note)))
            }
            OracleKind::Quadrature(m) => {
                let r = continuous_delta_quadrature(|s| m.density(s), m.support_left(), eps)?;
                Ok(Some((r.reference_value, r.reference_value, r.cost_note)))
            }
            OracleKind::Unavailable(_) => Ok(None),
        }
    }

    fn skipped(&self, eps: f64) -> VerifyRecord {
        let note = match &self.kind {
            OracleKind::Unavailable(why) => why.clone(),
            _ => "oracle exceeded its atom budget".into(),
        };
        VerifyRecord {
            eps,
            method: self.method().into(),
            reference: None,
            ok: true,
            note,
        }
    }

    /// Checks that the reference interval meets the bracket.
    pub fn check_bound(&self, bound: &PrivacyBound) -> Result<VerifyRecord> {
        let Some((lo, hi, note)) = self.reference(bound.k, bound.eps)? else {
            return Ok(self.skipped(bound.eps));
        };
        let ok = hi + tol(hi) >= bound.delta_lower && lo - tol(lo) <= bound.delta_upper;
        Ok(VerifyRecord {
            eps: bound.eps,
            method: self.method().into(),
            reference: Some(hi),
            ok,
            note,
        })
    }

    /// Checks an eps bracket for `target`: the reference delta must not
    /// exceed the target at `eps_upper` nor fall below it at `eps_lower`.
    pub fn check_epsilon(&self, k: u64, target: f64, eps_lower: f64, eps_upper: f64) -> Result<Vec<VerifyRecord>> {
        let mut out = Vec::with_capacity(2);
        for (eps, upper_end) in [(eps_upper, true), (eps_lower, false)] {
            let Some((lo, hi, note)) = self.reference(k, eps)? else {
                out.push(self.skipped(eps));
                continue;
            };
            let ok = if upper_end {
                lo - tol(lo) <= target
            } else {
                hi + tol(hi) >= target || eps == 0.0
            };
            out.push(VerifyRecord {
                eps,
                method: self.method().into(),
                reference: Some(hi),
                ok,
                note,
            });
        }
        Ok(out)
    }
}

fn tol(v: f64) -> f64 {
    ORACLE_TOLERANCE * v.abs().max(f64::MIN_POSITIVE)
}

fn output_plds(
    fx: pld_accountant::OutputDistribution,
    fy: pld_accountant::OutputDistribution,
    subsample: Option<f64>,
) -> Result<Vec<(AtomicPld, AtomicPld)>> {
    let pairs = match subsample {
        Some(q) => {
            let (a, b) = poisson_subsample_pair(&fx, &fy, q)?;
            vec![a, b]
        }
        None => vec![(fx.clone(), fy.clone()), (fy, fx)],
    };
    pairs
        .iter()
        .map(|(a, b)| {
            let pld = build_pld(a, b)?;
            Ok((pld.clone(), pld))
        })
        .collect()
}
