//! A learned partitioning advisor for distributed OLAP databases.
//!
//! A deep-Q-learning agent decides, per table, whether to replicate or
//! hash-partition (and by which attribute), trained first against an
//! analytical cost model and then refined against a simulated execution
//! backend. A committee of subspace experts improves adaptivity across
//! workload mixes, and incremental training absorbs newly added queries.

pub mod baselines;
pub mod committee;
pub mod cost;
pub mod dqn;
pub mod env;
pub mod error;
pub mod inference;
pub mod schema;
pub mod sim;
pub mod testutil;
pub mod training;

pub use cost::{CostBreakdown, CostModel, DeploymentConfig, QueryCostSource, WorkloadScorer};
pub use error::{AdvisorError, Result};
pub use schema::{
    Attribute, JoinEdge, PartitioningState, Query, Schema, StateViolation, Table, TableDesign,
    WorkloadMix,
};
pub use sim::{compute_scale_factors, ClusterSim, SampledDatabase, SimProfile};
pub use training::{RuntimeCache, TrainConfig, TrainOutcome, TrainingLog};
