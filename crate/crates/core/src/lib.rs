//! Data-driven nonlinearity-cancelling control from kernel interpolation.
//!
//! The pipeline learns a kernel model `s_f(x) = A k(x)` of an unknown drift
//! together with a deterministic error bound `δ(x)`, synthesizes a robust
//! state-feedback law `u = K̄x + K̂k̂(x)` by semidefinite programming, and
//! certifies sublevel sets of `V(x) = xᵀP⁻¹x` as positively invariant for the
//! closed loop.
//!
//! Modules, bottom-up:
//!
//! - [`kernel`]: kernels, Gram matrices, linear/nonlinear split of `A k(x)`
//! - [`interp`]: regularized interpolation and the power function
//! - [`plant`]: ground-truth simulator and experiment data
//! - [`sdp`]: dense log-barrier interior-point solver for LMI programs
//! - [`synthesis`]: controller SDP, gain extraction and robustness checks
//! - [`invariance`]: Lyapunov decrease bound and invariant-set certification
//! - [`pipeline`]: configuration, end-to-end runs, reports and plots

pub mod error;
pub mod fixture;
pub mod interp;
pub mod invariance;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod pipeline;
pub mod plant;
pub mod sdp;
pub mod synthesis;

pub use error::{Error, Result};
pub use fixture::{load_fixture, Fixture};
pub use interp::{fit, DriftDataset, ErrorBound, InterpModel};
pub use invariance::{certify_pi, LyapunovCert, PiCertificate, ResidualEvaluator};
pub use kernel::{CenterSet, KernelSpec};
pub use plant::{check_excitation, ForcedDataset, PlantModel};
pub use synthesis::{build_problem, synthesize, SynthesisProblem, SynthesisResult};
