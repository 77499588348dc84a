//! Inference: greedy rollouts that turn a trained agent into a concrete
//! partitioning recommendation, plus the scoring backends rollouts price
//! states with (runtime cache first, simulator or cost model as fallback).

use serde::Serialize;

use crate::cost::{CostModel, QueryCostSource, WorkloadScorer};
use crate::dqn::QAgent;
use crate::env::{ActionLayout, Rollout};
use crate::error::{AdvisorError, Result};
use crate::schema::{DesignSpec, PartitioningState, Query, Schema, TableDesign, WorkloadMix};
use crate::sim::ClusterSim;
use crate::training::RuntimeCache;

/// Cache-first pricing against the simulator; misses are executed and cached.
pub struct CachedSimSource<'a> {
    pub cache: &'a mut RuntimeCache,
    pub sim: &'a ClusterSim<'a>,
}

impl QueryCostSource for CachedSimSource<'_> {
    fn query_cost(&mut self, designs: &[TableDesign], query: &Query) -> f64 {
        if let Some(rt) = self.cache.lookup(query, designs) {
            return rt;
        }
        let rt = self.sim.simulate_query(designs, query);
        self.cache.insert(query, designs, rt);
        rt
    }
}

/// Cache-first pricing with the analytical cost model as fallback, for
/// inference without a live execution backend.
pub struct CacheWithModelFallback<'a> {
    pub cache: &'a RuntimeCache,
    pub model: CostModel<'a>,
}

impl QueryCostSource for CacheWithModelFallback<'_> {
    fn query_cost(&mut self, designs: &[TableDesign], query: &Query) -> f64 {
        match self.cache.peek(query, designs) {
            Some(rt) => rt,
            None => self.model.query_cost(designs, query),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RolloutStep {
    pub action: usize,
    pub reward: f64,
}

/// A recommended partitioning together with the greedy trajectory that
/// produced it. `best_step` 0 is the reference partitioning itself.
#[derive(Debug, Clone)]
pub struct Recommendation {
    pub state: PartitioningState,
    pub reward: f64,
    pub steps: Vec<RolloutStep>,
    pub best_step: usize,
    pub expert: Option<usize>,
}

/// Roll out `max_steps` greedy actions from the reference partitioning and
/// return the state of maximum reward along the trajectory, re-scored through
/// the scorer before returning.
pub fn recommend(
    agent: &QAgent,
    mix: WorkloadMix,
    schema: &Schema,
    scorer: &mut WorkloadScorer,
    max_steps: usize,
) -> Result<Recommendation> {
    if agent.fingerprint != schema.fingerprint() {
        return Err(AdvisorError::validation(
            "agent was trained for a different schema fingerprint",
        ));
    }
    if mix.len() != schema.queries.len() {
        return Err(AdvisorError::validation(format!(
            "mix has {} frequencies, schema has {} queries",
            mix.len(),
            schema.queries.len()
        )));
    }
    let layout = ActionLayout::new(schema);
    if agent.input_dim() != layout.state_len() || agent.action_dim() != layout.action_count() {
        return Err(AdvisorError::validation(
            "agent dimensions do not match the schema's state/action layout",
        ));
    }
    let mut rollout = Rollout::start(schema, &layout, mix, scorer)?;
    let mut best_state = rollout.state.clone();
    let mut best_reward = rollout.reward_of_current(scorer)?;
    let mut best_step = 0;
    let mut steps = Vec::with_capacity(max_steps);
    for t in 0..max_steps {
        let mask = rollout.legal_mask();
        let action = agent.greedy_action(&rollout.encoded(), &mask)?;
        let (_, reward) = rollout.step(action, scorer)?;
        steps.push(RolloutStep { action, reward });
        if reward > best_reward {
            best_reward = reward;
            best_state = rollout.state.clone();
            best_step = t + 1;
        }
    }
    // The agent oscillates around the optimum; we return the best state of
    // the whole trajectory, re-verified against the scorer.
    let cost = scorer.workload_cost(&best_state.designs, schema, &rollout.mix)?;
    let reward = crate::env::normalized_reward(cost, rollout.denominator)?;
    debug_assert!((reward - best_reward).abs() <= 1e-9 * best_reward.abs().max(1.0));
    debug_assert!(schema.validate_state(&best_state).is_empty());
    Ok(Recommendation { state: best_state, reward, steps, best_step, expert: None })
}

/// JSON-facing recommendation report.
#[derive(Debug, Clone, Serialize)]
pub struct RecommendationReport {
    pub designs: Vec<DesignSpec>,
    pub active_edges: Vec<usize>,
    pub expected_reward: f64,
    pub trajectory_length: usize,
    pub best_step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expert: Option<usize>,
}

impl RecommendationReport {
    pub fn new(schema: &Schema, rec: &Recommendation) -> Self {
        RecommendationReport {
            designs: DesignSpec::render(schema, &rec.state.designs),
            active_edges: rec.state.active_edges.iter().copied().collect(),
            expected_reward: rec.reward,
            trajectory_length: rec.steps.len(),
            best_step: rec.best_step,
            expert: rec.expert,
        }
    }

    /// Aligned-table rendering for terminals.
    pub fn to_table(&self) -> String {
        let width = self
            .designs
            .iter()
            .map(|d| d.table.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = String::new();
        out.push_str(&format!("{:<width$}  design\n", "table"));
        for d in &self.designs {
            let design = match d.mode.as_str() {
                "replicated" => "replicated".to_string(),
                _ => format!("partitioned by {}", d.key.as_deref().unwrap_or("?")),
            };
            out.push_str(&format!("{:<width$}  {design}\n", d.table));
        }
        out.push_str(&format!(
            "expected reward {:.6} (best at step {} of {})\n",
            self.expected_reward, self.best_step, self.trajectory_length
        ));
        if let Some(expert) = self.expert {
            out.push_str(&format!("served by expert {expert}\n"));
        }
        out
    }
}
