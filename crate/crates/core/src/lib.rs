//! Delay modeling and configuration planning for hierarchical split federated
//! learning.
//!
//! A model is split at an aggregator layer `h` and a cut layer `v`: every
//! client runs layers `1..=h`, a few clients act as local aggregators running
//! layers `h+1..=v` for the clients assigned to them, and the server runs the
//! rest. The crate computes the round delay and traffic of such a
//! configuration, selects admissible cut layers from accuracy profiles, plans
//! low-delay configurations, and checks the planner against exhaustive search
//! and an event-driven simulation.

pub mod cli;
pub mod cut;
pub mod delay;
pub mod oracle;
pub mod plan;
pub mod planner;
pub mod profile;
pub mod scenario;
pub mod sim;

pub use cut::{candidate_cut_layers, AccuracyProfile};
pub use delay::{round_delay, round_overhead, DelayBreakdown};
pub use oracle::{compare, exhaustive_best, OracleBudget};
pub use plan::{AssignmentTensor, Plan, PlanError};
pub use planner::{greedy_assign, max_aggregators, plan, replan, Decision, PlannerConfig};
pub use profile::{load_profile, LayerProfile, ModelProfile};
pub use scenario::{ClientId, Scenario, SystemChange};
pub use sim::{simulate_round, TaskTrace};
