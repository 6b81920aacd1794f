//! Deterministic, seed-reproducible simulator of a three-tier medical supply
//! chain under pandemic conditions.
//!
//! The crate is organized along the simulation's layers:
//!
//! - [`scenario`]: the exogenous world — SIR epidemic trajectories per region,
//!   stochastic demand, and Bernoulli disruption draws, all derived from a
//!   declarative [`scenario::ScenarioConfig`] plus one root seed.
//! - [`agents`]: the three agent classes (manufacturer, distributor, hospital)
//!   and their deterministic, stateless reasoning tools.
//! - [`coordination`]: the single-pass daily coordination round over the
//!   supply-chain DAG — orders flow up, allocations flow down, physical state
//!   is updated with goods-conservation checks.
//! - [`ledger`]: the simulated enforcement layer — permissioned roles,
//!   allocation validation, a hash-chained audit log, and a local
//!   content-addressed store.
//! - [`crosslayer`]: canonical snapshot serialization and the submit/verify
//!   protocol bridging the coordination layer and the ledger.
//! - [`metrics`]: resilience, fairness, efficiency, throughput, and
//!   service-level reporting over run logs.
//! - [`policy`]: the line-delimited wire protocol that lets an external
//!   process replace any built-in agent policy, with sanitization and
//!   fallback guarantees.
//! - [`runner`]: full-run orchestration, artifact export, replay, and audit
//!   verification.
//!
//! Everything is a pure function of explicit inputs plus explicitly seeded
//! random streams: two runs with the same config and seed produce
//! byte-identical artifacts.

pub mod agents;
pub mod coordination;
pub mod crosslayer;
pub mod ledger;
pub mod metrics;
pub mod policy;
pub mod rng;
pub mod runner;
pub mod scenario;
pub mod types;

pub use types::{AgentClass, AgentId};
