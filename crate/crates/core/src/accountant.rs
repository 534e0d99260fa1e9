//! Strict delta brackets for k-fold compositions: grid approximations on
//! both sides, FFT composition and the worst-case error budget.

use crate::error::{PldError, Result};
use crate::error_bound::{mgf_grid, total_error_bound, ErrorBudget, MgfPair};
use crate::fourier::{compose_self, epsilon_for_delta, first_index_above, ComposedGridPld, InversionRole};
use crate::grid::{clamp_to_grid, snap_left, snap_right, GridPld, GridSpec, Side};
use crate::pld::{AtomicPld, PrivacyBound};

/// Safety factor applied when the default `lambda = L/2` violates
/// `lambda < 1/dx`.
const LAMBDA_CLAMP_FACTOR: f64 = 0.99;

/// Resolved choice of the Chernoff parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaChoice {
    pub lambda: f64,
    /// True when the default `L/2` had to be lowered to `0.99/dx`.
    pub clamped: bool,
}

/// Picks `lambda`: `L/2` unless that reaches `1/dx`, in which case it is
/// lowered to `0.99/dx`. An explicit value must satisfy `0 < lambda < 1/dx`.
pub fn choose_lambda(grid: GridSpec, explicit: Option<f64>) -> Result<LambdaChoice> {
    let limit = 1.0 / grid.dx();
    match explicit {
        Some(lambda) => {
            if !(lambda > 0.0 && lambda < limit) {
                return Err(PldError::InvalidParameter(format!(
                    "lambda must satisfy 0 < lambda < 1/dx = {limit}, got {lambda}; lower lambda or raise n"
                )));
            }
            Ok(LambdaChoice { lambda, clamped: false })
        }
        None => {
            let half = grid.half_width() / 2.0;
            if half < limit {
                Ok(LambdaChoice {
                    lambda: half,
                    clamped: false,
                })
            } else {
                Ok(LambdaChoice {
                    lambda: LAMBDA_CLAMP_FACTOR * limit,
                    clamped: true,
                })
            }
        }
    }
}

/// One side of the bracket: a composed grid PLD and its error budget.
#[derive(Debug, Clone)]
struct SideState {
    composed: ComposedGridPld,
    budget: ErrorBudget,
    /// Shift allowance for atoms snapped within rounding of a grid point.
    slack: f64,
    /// 2-norm allowance for FFT roundoff in the composed masses.
    fft_noise_l2: f64,
}

impl SideState {
    fn new(pld: &GridPld, k: u64, mgf: MgfPair) -> Result<Self> {
        let composed = compose_self(pld, k)?;
        let budget = total_error_bound(k, &mgf, pld.grid().half_width())?;
        let fft_noise_l2 = if k == 1 { 0.0 } else { fft_noise_l2(pld, k) };
        Ok(Self {
            composed,
            budget,
            slack: k as f64 * pld.snap_slack(),
            fft_noise_l2,
        })
    }

    /// Everything added to (or subtracted from) the grid sum `tilde` at
    /// `eps`: error budget, snapping slack and floating-point roundoff.
    fn widening(&self, eps: f64, tilde: f64) -> f64 {
        let grid = self.composed.grid();
        let summed = (grid.n() - first_index_above(grid, eps)) as f64;
        let roundoff = summed.sqrt() * self.fft_noise_l2 + summed * f64::EPSILON * tilde;
        self.budget.total + self.slack + roundoff
    }
}

/// Allowance for the 2-norm of the roundoff error of an FFT composition.
///
/// Each transform has 2-norm relative error about `5 u log2(n)`, and raising
/// to the k-th power multiplies the forward error by `k`. Summing the error
/// over `m` grid points costs at most a further factor `sqrt(m)`.
pub(crate) fn fft_noise_l2(input: &GridPld, k: u64) -> f64 {
    const TRANSFORM_CONSTANT: f64 = 5.0;
    let n = input.grid().n() as f64;
    let l2 = input.mass().iter().map(|m| m * m).sum::<f64>().sqrt();
    let l1 = input.total_mass().max(1.0);
    let growth = ((k - 1) as f64 * l1.ln()).exp();
    (k + 1) as f64 * TRANSFORM_CONSTANT * n.log2() * f64::EPSILON * l2 * growth
}

/// Lower and upper grid approximations of one PLD direction, composed `k`
/// times, ready to be queried at any eps.
#[derive(Debug, Clone)]
pub struct GridBounds {
    lower: SideState,
    upper: SideState,
    grid: GridSpec,
    k: u64,
    lambda: LambdaChoice,
}

impl GridBounds {
    /// Brackets from grid PLDs that under- and over-estimate the true PLD.
    /// MGFs are summed directly on the grid atoms.
    pub fn from_grid_plds(lower: &GridPld, upper: &GridPld, k: u64, lambda: Option<f64>) -> Result<Self> {
        let grid = lower.grid();
        if upper.grid() != grid {
            return Err(PldError::GridMismatch(
                "lower and upper approximations use different grids".into(),
            ));
        }
        let choice = choose_lambda(grid, lambda)?;
        let mgf_lower = mgf_or_unit(lower, choice.lambda)?;
        let mgf_upper = mgf_or_unit(upper, choice.lambda)?;
        Self::from_parts(lower, upper, k, choice, mgf_lower, mgf_upper)
    }

    /// Brackets with caller-supplied MGF bounds, e.g. for distributions that
    /// extend past the grid.
    pub fn from_grid_plds_with_mgf(
        lower: &GridPld,
        upper: &GridPld,
        k: u64,
        choice: LambdaChoice,
        mgf_lower: MgfPair,
        mgf_upper: MgfPair,
    ) -> Result<Self> {
        if upper.grid() != lower.grid() {
            return Err(PldError::GridMismatch(
                "lower and upper approximations use different grids".into(),
            ));
        }
        Self::from_parts(lower, upper, k, choice, mgf_lower, mgf_upper)
    }

    fn from_parts(
        lower: &GridPld,
        upper: &GridPld,
        k: u64,
        choice: LambdaChoice,
        mgf_lower: MgfPair,
        mgf_upper: MgfPair,
    ) -> Result<Self> {
        if k == 0 {
            return Err(PldError::InvalidParameter("k must be at least 1".into()));
        }
        Ok(Self {
            lower: SideState::new(lower, k, mgf_lower)?,
            upper: SideState::new(upper, k, mgf_upper)?,
            grid: lower.grid(),
            k,
            lambda: choice,
        })
    }

    /// Snaps an exact PLD down and up. Every atom must lie in `[-L, L - dx]`.
    pub fn from_atomic(pld: &AtomicPld, grid: GridSpec, k: u64, lambda: Option<f64>) -> Result<Self> {
        Self::from_grid_plds(&snap_left(pld, grid)?, &snap_right(pld, grid)?, k, lambda)
    }

    /// Like [`GridBounds::from_atomic`], but first moves out-of-range atoms
    /// conservatively into the grid range (see [`clamp_to_grid`]).
    pub fn from_atomic_clamped(pld: &AtomicPld, grid: GridSpec, k: u64, lambda: Option<f64>) -> Result<Self> {
        let lower = snap_left(&clamp_to_grid(pld, grid, Side::Lower), grid)?;
        let upper = snap_right(&clamp_to_grid(pld, grid, Side::Upper), grid)?;
        Self::from_grid_plds(&lower, &upper, k, lambda)
    }

    /// Clamped variant for PLDs that were already built differently for the
    /// two sides (e.g. with side-dependent underflow handling).
    pub fn from_split_atomic_clamped(
        lower: &AtomicPld,
        upper: &AtomicPld,
        grid: GridSpec,
        k: u64,
        lambda: Option<f64>,
    ) -> Result<Self> {
        let lower = snap_left(&clamp_to_grid(lower, grid, Side::Lower), grid)?;
        let upper = snap_right(&clamp_to_grid(upper, grid, Side::Upper), grid)?;
        Self::from_grid_plds(&lower, &upper, k, lambda)
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn lambda(&self) -> LambdaChoice {
        self.lambda
    }

    pub fn lower_composed(&self) -> &ComposedGridPld {
        &self.lower.composed
    }

    pub fn upper_composed(&self) -> &ComposedGridPld {
        &self.upper.composed
    }

    pub fn lower_budget(&self) -> ErrorBudget {
        self.lower.budget
    }

    pub fn upper_budget(&self) -> ErrorBudget {
        self.upper.budget
    }

    /// Componentwise maximum of the two budgets.
    pub fn budget(&self) -> ErrorBudget {
        max_budget(self.lower.budget, self.upper.budget)
    }

    /// Most negative composed mass on either side (FFT roundoff diagnostic).
    pub fn min_mass(&self) -> f64 {
        self.lower.composed.min_mass().min(self.upper.composed.min_mass())
    }

    /// Amounts subtracted from the lower and added to the upper grid sum at
    /// `eps`: error budget, snapping slack and roundoff allowance.
    pub fn allowance(&self, eps: f64) -> (f64, f64) {
        let bl = self.lower.composed.delta_tilde(eps);
        let bu = self.upper.composed.delta_tilde(eps);
        (self.lower.widening(eps, bl), self.upper.widening(eps, bu))
    }

    pub fn bound(&self, eps: f64) -> PrivacyBound {
        let tilde_lower = self.lower.composed.delta_tilde(eps);
        let tilde_upper = self.upper.composed.delta_tilde(eps);
        let delta_lower = (tilde_lower - self.lower.widening(eps, tilde_lower)).max(0.0);
        let delta_upper = (tilde_upper + self.upper.widening(eps, tilde_upper)).min(1.0);
        PrivacyBound {
            delta_lower: delta_lower.min(delta_upper),
            delta_upper,
            err_bound: self.lower.budget.total.max(self.upper.budget.total),
            delta_tilde_lower: tilde_lower,
            delta_tilde_upper: tilde_upper,
            grid: self.grid,
            k: self.k,
            eps,
        }
    }
}

/// A point mass at zero (or any distribution without finite atoms) still
/// needs an MGF for the budget; an empty finite part contributes nothing.
fn mgf_or_unit(pld: &GridPld, lambda: f64) -> Result<MgfPair> {
    if pld.atoms().next().is_none() {
        return Ok(MgfPair {
            alpha_plus: f64::NEG_INFINITY,
            alpha_minus: f64::NEG_INFINITY,
            lambda,
        });
    }
    mgf_grid(pld, lambda)
}

fn max_budget(a: ErrorBudget, b: ErrorBudget) -> ErrorBudget {
    ErrorBudget {
        tail: a.tail.max(b.tail),
        truncation: a.truncation.max(b.truncation),
        periodisation: a.periodisation.max(b.periodisation),
        total: a.total.max(b.total),
        lambda_used: a.lambda_used,
    }
}

/// Brackets over several PLD directions. Tight delta is the maximum over
/// directions, so both ends of the bracket take the per-direction maximum.
#[derive(Debug, Clone)]
pub struct MechanismBounds {
    directions: Vec<GridBounds>,
}

/// Result of inverting the delta bracket at a target delta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonBracket {
    pub eps_lower: f64,
    pub eps_upper: f64,
}

impl MechanismBounds {
    pub fn new(directions: Vec<GridBounds>) -> Result<Self> {
        let first = directions
            .first()
            .ok_or_else(|| PldError::InvalidParameter("need at least one direction".into()))?;
        let (grid, k) = (first.grid(), first.k());
        if directions.iter().any(|d| d.grid() != grid || d.k() != k) {
            return Err(PldError::GridMismatch("directions must share grid and k".into()));
        }
        Ok(Self { directions })
    }

    pub fn directions(&self) -> &[GridBounds] {
        &self.directions
    }

    pub fn grid(&self) -> GridSpec {
        self.directions[0].grid()
    }

    pub fn k(&self) -> u64 {
        self.directions[0].k()
    }

    pub fn budget(&self) -> ErrorBudget {
        self.directions
            .iter()
            .map(GridBounds::budget)
            .reduce(max_budget)
            .expect("at least one direction")
    }

    pub fn lambda(&self) -> LambdaChoice {
        self.directions[0].lambda()
    }

    pub fn min_mass(&self) -> f64 {
        self.directions.iter().map(GridBounds::min_mass).fold(f64::INFINITY, f64::min)
    }

    pub fn bound(&self, eps: f64) -> PrivacyBound {
        let mut bounds = self.directions.iter().map(|d| d.bound(eps));
        let mut acc = bounds.next().expect("at least one direction");
        for b in bounds {
            acc.delta_lower = acc.delta_lower.max(b.delta_lower);
            acc.delta_upper = acc.delta_upper.max(b.delta_upper);
            acc.err_bound = acc.err_bound.max(b.err_bound);
            acc.delta_tilde_lower = acc.delta_tilde_lower.max(b.delta_tilde_lower);
            acc.delta_tilde_upper = acc.delta_tilde_upper.max(b.delta_tilde_upper);
        }
        acc
    }

    /// Conservative eps bracket for a target delta: `eps_upper` inverts the
    /// upper delta curve and `eps_lower` the lower one, searched over
    /// `[0, L]`.
    pub fn epsilon(&self, target: f64) -> Result<EpsilonBracket> {
        if !(target > 0.0 && target < 1.0) {
            return Err(PldError::InvalidParameter(format!(
                "target delta must lie in (0, 1), got {target}"
            )));
        }
        let hi = self.grid().half_width();
        let eps_upper = epsilon_for_delta(|e| self.bound(e).delta_upper, target, 0.0, hi, InversionRole::Upper)?;
        let eps_lower = epsilon_for_delta(|e| self.bound(e).delta_lower, target, 0.0, hi, InversionRole::Lower)?;
        Ok(EpsilonBracket { eps_lower, eps_upper })
    }
}
