//! Numerical checks of the standing assumptions and the decay certificates.
//!
//! - [`pe`]: sliding-window Gram estimates of persistent excitation.
//! - [`contraction`]: sampled contraction margin of the reference dynamics.
//! - [`ltv`]: state-transition matrices, decay constants, `P` and `V`.
//! - [`ledger`]: proof constants and coupling thresholds.
//! - [`fit`]: exponential-rate fits.

pub mod contraction;
pub mod fit;
pub mod ledger;
pub mod ltv;
pub mod pe;

pub use contraction::{contraction_margin, ContractionEstimate};
pub use fit::{fit_exp_rate, ExpFit};
pub use ledger::{build_instance, proof_constants, InstanceOptions, ProblemInstance, ProofConstants, Threshold};
pub use ltv::{
    decay_bounds, decay_check, perturbed_decay_certificate, lyapunov_residual, lyapunov_value, p_matrix, p_matrix_path,
    state_transition, DecayBounds, DecayReport, PBounds, PMatrix,
};
pub use pe::{pe_gram, PeEstimate};
