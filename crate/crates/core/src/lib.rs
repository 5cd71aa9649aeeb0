//! Simulation and analysis of conditional ground-state quantum beats in a
//! two-mode cavity QED system.
//!
//! The crate covers the full pipeline: operators of a reduced six-level atom
//! coupled to two orthogonally polarized cavity modes ([`model`]), closed-form
//! shift and decoherence predictions ([`analytic`]), a quantum-jump trajectory
//! engine with a drive-gating feedback actuator ([`trajectory`]), time-stamped
//! photon records ([`records`]), correlation estimators, spectra, fits and
//! post-selection filters ([`correlation`]), and the workflow layer behind the
//! command-line tool ([`cli`]).

pub mod analytic;
pub mod cli;
pub mod config;
pub mod correlation;
pub mod error;
pub mod model;
pub mod operator;
pub mod params;
pub mod records;
pub mod space;
pub mod trajectory;

pub use error::{Error, Result};
pub use model::{build_effective_hamiltonian, build_operators, steady_alpha, Frame, OperatorSet};
pub use operator::OperatorMatrix;
pub use params::{hz, to_hz, PhysicalParams, TransitionWeights};
pub use space::{HilbertSpace, Level};

/// Builds the truncated space; alias of [`HilbertSpace::new`].
pub fn build_space(n_max_v: usize, n_max_h: usize) -> Result<HilbertSpace> {
    HilbertSpace::new(n_max_v, n_max_h)
}
