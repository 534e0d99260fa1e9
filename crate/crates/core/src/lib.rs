//! Numerical accountant for differential privacy based on privacy loss
//! distributions (PLDs).
//!
//! A mechanism's worst-case pair of output distributions defines a PLD. The
//! PLD is placed on an equidistant grid from below and from above, composed
//! with the FFT, and the resulting approximations of delta(eps) are widened by
//! a worst-case bound on the truncation and periodisation error. The result
//! is a strict bracket `delta_lower <= delta(eps) <= delta_upper`.

pub mod accountant;
pub mod error;
pub mod error_bound;
pub mod fourier;
pub mod grid;
pub mod mechanisms;
pub mod oracles;
pub mod pld;

pub use accountant::{choose_lambda, EpsilonBracket, GridBounds, LambdaChoice, MechanismBounds};
pub use error::{PldError, Result};
pub use error_bound::{chernoff_tail, mgf, mgf_grid, snapped_mgf_bounds, strict_delta_bounds, total_error_bound, ErrorBudget, MgfPair};
pub use fourier::{compose_heterogeneous, compose_self, epsilon_for_delta, fft_shift, ComposedGridPld, InversionRole};
pub use grid::{clamp_to_grid, discretize_continuous, snap_left, snap_right, GridPld, GridSpec, Side};
pub use mechanisms::{Direction, LatticePair, MechanismSpec, SubsampledGaussian};
pub use pld::{build_pld, delta_exact, delta_infty_composed, Atom, AtomicPld, OutputDistribution, PrivacyBound};
