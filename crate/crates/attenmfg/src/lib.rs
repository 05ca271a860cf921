//! Scheduling engine for sensor-driven operations & maintenance of leased,
//! multi-site manufacturing fleets.
//!
//! The crate covers the full pipeline:
//!
//! * [`model`] — problem instances: machines, Weibull survival models, failure
//!   scenarios, demand, and the dynamic (condition-driven) maintenance cost.
//! * [`features`] — the canonical feature tensors (maintenance cost `chi`,
//!   demand penalty `y`, site channel) over an idle-augmented, slot-expanded
//!   timeline. These tensors define the single cost function every solver in
//!   this crate optimizes.
//! * [`eval`] — schedules, feasibility checks, and the two independent cost
//!   routes (slot-sequence cost vs. direct scenario evaluation) that must agree.
//! * [`oracle`] — exact solvers (exhaustive enumeration and branch-and-bound)
//!   that provide ground truth for optimality gaps at desk scale.
//! * [`policy`] — the attention encoder / masked pointer decoder that maps an
//!   instance to a maintenance sequence.
//! * [`train`] — REINFORCE with a rollout-mean baseline, Adam, and
//!   resumable checkpoints.
//! * [`harness`] — generation / training / evaluation commands, run manifests,
//!   and cross-configuration gap matrices backing the CLI.
//! * [`verify`] — self-contained invariant suites with independent oracle
//!   implementations (state-machine simulator, assignment solver).
//!
//! The narrative guide in `book/` walks through the same pipeline; its code
//! snippets are compiled as doc-tests via [`guide`].

pub mod autodiff;
pub mod eval;
#[cfg(test)]
pub(crate) mod testkit;
pub mod features;
pub mod guide;
pub mod harness;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod train;
pub mod verify;

pub use eval::{check_feasible, direct_mip_cost, gap, sequence_cost, CostBreakdown, Schedule};
pub use features::{assemble_features, FeatureTensor};
pub use model::{generate_instance, EconomicParams, GeneratorConfig, Instance, MachineSpec};
pub use oracle::{solve_bnb, solve_exhaustive, OracleConfig, OracleResult};
pub use policy::{rollout, DecodeMode, PolicyParams};
pub use train::{train, TrainConfig};
