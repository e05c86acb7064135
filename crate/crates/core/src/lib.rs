//! Simulation and verification toolkit for heterogeneous multi-agent
//! networks whose agents align their internal parameters by reusing the
//! diffusive coupling signal.
//!
//! Modules, bottom-up:
//!
//! - [`graph`]: communication graph, Laplacian and its decomposition.
//! - [`model`]: linearly parameterized node dynamics and the network vector field.
//! - [`transforms`]: consensus/disagreement coordinates and the `xi` change of variables.
//! - [`simulation`]: fixed-step RK4, trajectories, blended and reference dynamics.
//! - [`analysis`]: persistent-excitation, contraction, decay certificates, the
//!   Lyapunov matrix and the proof-constant ledger.
//! - [`experiments`]: scenario configuration, presets, CSV/SVG output and the
//!   reproduction harness behind the `vfc` binary.

// `!(x > 0.0)` is the idiom used throughout to reject NaN along with
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod experiments;
pub mod graph;
mod linalg;
pub mod model;
pub mod simulation;
pub mod transforms;

pub use error::{Error, Result};
pub use graph::{Graph, LaplacianDecomposition};
pub use linalg::{norm, spectral_norm, sym_eig_range};
pub use model::{CouplingGains, NetworkState, Regressor, ScalarLinearSine, VanDerPolCompanion};
pub use simulation::{simulate, IntegratorConfig, Trajectory};
