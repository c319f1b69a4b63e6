//! Ground states of nonlocal Schrödinger operators `Lu = -m u + a * u` on
//! `Q_p^n`, and recurrence of the random walk driven by the jump density `a`.
//!
//! The pieces:
//!
//! * [`padic`]: truncated p-adic numbers, the additive character and the
//!   coset grid of a ball.
//! * [`radial`]: radial jump densities with closed-form shell sums and their
//!   Fourier transforms.
//! * [`spectral`]: the Green kernel of `(λ+1)(λ-L_0)^-1 - 1`, the operator
//!   `Q_λ`, its spectral radius and the ground-state search `r(Q_λ) = 1`.
//! * [`recurrence`]: series and integral tests for recurrence, exact return
//!   probabilities.
//! * [`walk`]: Monte Carlo simulation of the random walk.

pub mod error;
pub mod linalg;
pub mod padic;
pub mod radial;
pub mod recurrence;
pub mod spectral;
pub mod walk;

pub use error::{Error, Result};
pub use linalg::{power_iteration, DenseMatrix, PerronPair, PowerOptions};
pub use padic::{GridSpec, Norm, PadicApprox, PadicPoint, Precision};
pub use radial::{
    fourier_radial, one_minus_fourier, shell_character_integral, DualProfile, RadialProfile, Tail,
};
pub use recurrence::{Classification, RecurrenceReport};
pub use spectral::{
    find_ground_state, find_ground_state_radial, green_kernel, q_matrix, GroundState,
    GroundStateSearch, KernelTable, Potential, QMatrix, RadialPotential, SolverTolerances,
};
pub use walk::{WalkConfig, WalkStats};
