//! Two-stage deployment of heterogeneous service agents over a dense target field.
//!
//! Stage one estimates the target density as a Gaussian mixture with a
//! consensus-driven distributed EM; stage two assigns each service agent to a
//! mixture component with a KL-divergence cost, solves the resulting
//! assignment LP with a column-partitioned simplex, and drives every agent to
//! its optimal pose with a finite-time minimum-energy controller.
//!
//! Modules map onto the pipeline:
//!
//! - [`network`]: communication graph and synchronous message rounds
//! - [`consensus`]: active weighted-average consensus
//! - [`gmm`]: mixtures, centralized EM, distributed EM
//! - [`divergence`]: Gaussian KLD, assignment costs, optimal poses
//! - [`assignment`]: assignment LP, lexicographic simplex, distributed simplex
//! - [`control`]: Gramian, minimum-energy input, unicycle linearization
//! - [`simulator`]: scenarios, pipeline orchestration, metrics and rendering

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod consensus;
pub mod control;
pub mod divergence;
mod error;
pub mod gmm;
pub mod linalg;
pub mod network;
pub mod simulator;

pub use error::{Error, Result};

pub use assignment::{AssignmentPlan, AssignmentProblem, Basis};
pub use consensus::{ConsensusInput, ConsensusParams, ConsensusState};
pub use divergence::{AxisForm, Pose, ServiceProfile};
pub use gmm::{GaussianComponent, Mixture, TargetSet};
pub use linalg::{Mat2, Vec2};
pub use network::Graph;
pub use simulator::{RunReport, Scenario};
