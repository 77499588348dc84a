//! Offline and online training loops.
//!
//! Offline training prices every visited partitioning with the analytical
//! cost model. Online training executes (simulated) queries, with four
//! optimizations: table sampling with per-query scale factors, the query
//! runtime cache, lazy repartitioning, and timeouts derived from the best
//! reward seen so far.

pub mod cache;

pub use cache::{CacheEntry, CacheExport, CacheKey, RuntimeCache};

use std::io::Write;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{CostModel, DeploymentConfig, WorkloadScorer};
use crate::dqn::{AgentConfig, EpsilonSchedule, QAgent, Transition};
use crate::env::{apply, encode_with, legal_actions, normalized_reward, ActionLayout};
use crate::error::{AdvisorError, Result};
use crate::schema::{Schema, WorkloadMix};
use crate::sim::ClusterSim;

/// How the per-episode workload mix is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MixSampling {
    /// Each raw frequency uniform in [0,1], then normalized by the maximum.
    #[default]
    Uniform,
    /// Every query occurs equally frequently.
    FixedOnes,
    /// A fixed raw frequency vector, normalized by its maximum.
    Fixed(Vec<f64>),
}

/// Hyperparameters of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub episodes: usize,
    /// Steps per episode (t_max).
    pub max_steps: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Target network soft-update rate, applied once per episode.
    pub tau: f64,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    /// Warm-started online runs begin at the epsilon reached after this many
    /// offline episodes.
    pub online_epsilon_episodes: u64,
    pub hidden_layers: Vec<usize>,
    pub seed: u64,
    pub mix_sampling: MixSampling,
    pub use_cache: bool,
    pub lazy_repartitioning: bool,
    pub use_timeouts: bool,
    /// Keep a warm-started agent's replay buffer. Only sound when the warm
    /// agent's rewards came from the same backend.
    pub keep_warm_buffer: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 600,
            max_steps: 100,
            gamma: 0.99,
            learning_rate: 5e-4,
            batch_size: 32,
            buffer_capacity: 10_000,
            tau: 1e-3,
            epsilon_start: 1.0,
            epsilon_decay: 0.997,
            online_epsilon_episodes: 600,
            hidden_layers: vec![128, 64],
            seed: 0,
            mix_sampling: MixSampling::Uniform,
            use_cache: true,
            lazy_repartitioning: true,
            use_timeouts: false,
            keep_warm_buffer: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, schema: &Schema) -> Result<()> {
        if self.episodes == 0 {
            return Err(AdvisorError::validation("episodes must be >= 1"));
        }
        if self.max_steps < schema.tables.len() {
            return Err(AdvisorError::validation(format!(
                "max_steps ({}) must be at least the table count ({}) so every design stays reachable",
                self.max_steps,
                schema.tables.len()
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(AdvisorError::validation("gamma must be in [0, 1)"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(AdvisorError::validation("learning_rate must be > 0"));
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return Err(AdvisorError::validation(
                "batch_size must be in 1..=buffer_capacity",
            ));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(AdvisorError::validation("tau must be in (0, 1]"));
        }
        if !(self.epsilon_start > 0.0 && self.epsilon_start <= 1.0) {
            return Err(AdvisorError::validation("epsilon_start must be in (0, 1]"));
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return Err(AdvisorError::validation("epsilon_decay must be in (0, 1]"));
        }
        if let MixSampling::Fixed(raw) = &self.mix_sampling {
            if raw.len() != schema.queries.len() {
                return Err(AdvisorError::validation(format!(
                    "fixed mix has {} entries, schema has {} queries",
                    raw.len(),
                    schema.queries.len()
                )));
            }
        }
        Ok(())
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            hidden_layers: self.hidden_layers.clone(),
            gamma: self.gamma,
            learning_rate: self.learning_rate,
            buffer_capacity: self.buffer_capacity,
            batch_size: self.batch_size,
            epsilon_start: self.epsilon_start,
            epsilon_decay: self.epsilon_decay,
        }
    }
}

/// One training-log line per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub episode: usize,
    pub step: usize,
    pub action: usize,
    pub reward: f64,
    pub cache_hits: u64,
    pub executed_queries: u64,
    pub repartitions: u64,
    pub epsilon: f64,
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub steps: Vec<StepLog>,
}

impl TrainingLog {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for step in &self.steps {
            serde_json::to_writer(&mut w, step)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf8")
    }

    pub fn total_executed(&self) -> u64 {
        self.steps.iter().map(|s| s.executed_queries).sum()
    }

    pub fn total_repartitions(&self) -> u64 {
        self.steps.iter().map(|s| s.repartitions).sum()
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub agent: QAgent,
    pub log: TrainingLog,
    /// Steps aborted by the timeout optimization.
    pub timeouts: u64,
}

/// Draw the workload mix for one episode.
pub fn sample_mix(sampling: &MixSampling, query_count: usize, rng: &mut ChaCha8Rng) -> Result<WorkloadMix> {
    match sampling {
        MixSampling::Uniform => loop {
            let raw: Vec<f64> = (0..query_count).map(|_| rng.gen::<f64>()).collect();
            if raw.iter().any(|&f| f > 0.0) {
                return WorkloadMix::normalized(raw);
            }
        },
        MixSampling::FixedOnes => Ok(WorkloadMix::all_ones(query_count)),
        MixSampling::Fixed(raw) => WorkloadMix::normalized(raw.clone()),
    }
}

/// Offline training: bootstrap a Q-agent against the analytical cost model.
pub fn train_offline(
    schema: &Schema,
    deploy: &DeploymentConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate(schema)?;
    let mut model = CostModel::new(schema, deploy)?;
    let layout = ActionLayout::new(schema);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut agent = QAgent::new(
        layout.state_len(),
        layout.action_count(),
        &config.agent_config(),
        schema.fingerprint(),
        &mut rng,
    );
    let p0 = schema.reference_partitioning();
    let mut log = TrainingLog::default();

    for episode in 0..config.episodes {
        let mix = sample_mix(&config.mix_sampling, schema.queries.len(), &mut rng)?;
        let mut scorer = WorkloadScorer::new(&mut model);
        let denominator = scorer.workload_cost(&p0.designs, schema, &mix)?;
        if !(denominator > 0.0) {
            return Err(AdvisorError::validation(
                "reference partitioning has zero cost for the sampled mix",
            ));
        }
        let epsilon = agent.epsilon.current();
        let mut state = p0.clone();
        let mut encoded = encode_with(&layout, &state, &mix);
        for step in 0..config.max_steps {
            let mask = legal_actions(&state, schema, &layout);
            let action = agent.select_action(&encoded, &mask, epsilon, &mut rng)?;
            let next = apply(&state, action, schema, &layout)?;
            let cost = scorer.workload_cost(&next.designs, schema, &mix)?;
            let reward = normalized_reward(cost, denominator)?;
            let next_encoded = encode_with(&layout, &next, &mix);
            let next_mask = legal_actions(&next, schema, &layout);
            agent.store_transition(Transition {
                state: encoded,
                action,
                reward,
                next_state: next_encoded.clone(),
                next_legal: next_mask,
            });
            let loss = agent.train_step(&mut rng);
            log.steps.push(StepLog {
                episode,
                step,
                action,
                reward,
                cache_hits: 0,
                executed_queries: 0,
                repartitions: 0,
                epsilon,
                loss,
            });
            state = next;
            encoded = next_encoded;
        }
        agent.epsilon.advance();
        agent.soft_update(config.tau);
        agent.episodes_trained += 1;
    }
    Ok(TrainOutcome { agent, log, timeouts: 0 })
}

/// Online training against the simulated cluster, per-episode mixes drawn
/// from the config's sampling law.
pub fn train_online(
    schema: &Schema,
    sim: &mut ClusterSim,
    cache: &mut RuntimeCache,
    scale_factors: &[f64],
    config: &TrainConfig,
    warm_start: Option<&QAgent>,
) -> Result<TrainOutcome> {
    let sampling = config.mix_sampling.clone();
    let mut sampler =
        move |rng: &mut ChaCha8Rng| sample_mix(&sampling, schema.queries.len(), rng);
    train_online_routed(schema, sim, cache, scale_factors, config, warm_start, &mut sampler)
}

/// Online training with a caller-provided mix source (used by committee
/// experts, whose mixes are routed to their subspace).
pub fn train_online_routed(
    schema: &Schema,
    sim: &mut ClusterSim,
    cache: &mut RuntimeCache,
    scale_factors: &[f64],
    config: &TrainConfig,
    warm_start: Option<&QAgent>,
    mix_sampler: &mut dyn FnMut(&mut ChaCha8Rng) -> Result<WorkloadMix>,
) -> Result<TrainOutcome> {
    config.validate(schema)?;
    if scale_factors.len() != schema.queries.len() {
        return Err(AdvisorError::validation(
            "scale factor vector length does not match query count",
        ));
    }
    let layout = ActionLayout::new(schema);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut agent = match warm_start {
        Some(base) => {
            if base.fingerprint != schema.fingerprint() {
                return Err(AdvisorError::validation(
                    "warm-start agent was trained for a different schema fingerprint",
                ));
            }
            let mut a = base.clone();
            // Refinement resumes exploration at the value reached after the
            // configured number of offline episodes. Experiences priced by a
            // different reward source are dropped.
            a.epsilon = EpsilonSchedule::with_offset(
                config.epsilon_start,
                config.epsilon_decay,
                config.online_epsilon_episodes,
            );
            if !config.keep_warm_buffer {
                a.buffer = crate::dqn::ReplayBuffer::new(config.buffer_capacity);
            }
            a.batch_size = config.batch_size;
            a.gamma = config.gamma;
            a
        }
        None => QAgent::new(
            layout.state_len(),
            layout.action_count(),
            &config.agent_config(),
            schema.fingerprint(),
            &mut rng,
        ),
    };

    let p0 = schema.reference_partitioning();
    // Measure the reference partitioning once; its runtimes anchor every
    // episode's reward denominator.
    let mut p0_runtime = vec![0.0; schema.queries.len()];
    for q in &schema.queries {
        let rt = match if config.use_cache { cache.lookup(q, &p0.designs) } else { None } {
            Some(rt) => rt,
            None => {
                let rt = sim.simulate_query(&p0.designs, q);
                if config.use_cache {
                    cache.insert(q, &p0.designs, rt);
                }
                rt
            }
        };
        p0_runtime[q.id] = rt;
    }

    let mut best_reward = -1.0_f64;
    let mut log = TrainingLog::default();
    let mut timeout_count = 0u64;

    for episode in 0..config.episodes {
        let mix = mix_sampler(&mut rng)?;
        if mix.len() != schema.queries.len() {
            return Err(AdvisorError::validation(
                "sampled mix length does not match query count",
            ));
        }
        let denominator: f64 = schema
            .queries
            .iter()
            .zip(&mix.frequencies)
            .filter(|(_, &f)| f > 0.0)
            .map(|(q, &f)| f * scale_factors[q.id] * p0_runtime[q.id])
            .sum();
        if !(denominator > 0.0) {
            return Err(AdvisorError::validation(
                "reference partitioning has zero weighted runtime for the sampled mix",
            ));
        }
        let epsilon = agent.epsilon.current();
        let mut state = p0.clone();
        let mut encoded = encode_with(&layout, &state, &mix);

        for step in 0..config.max_steps {
            let mask = legal_actions(&state, schema, &layout);
            let action = agent.select_action(&encoded, &mask, epsilon, &mut rng)?;
            let next = apply(&state, action, schema, &layout)?;

            // Queries whose runtime is missing for the new designs.
            let mut step_hits = 0u64;
            let mut runtimes: Vec<Option<f64>> = vec![None; schema.queries.len()];
            let mut pending = Vec::new();
            for (q, &f) in schema.queries.iter().zip(&mix.frequencies) {
                if f <= 0.0 {
                    continue;
                }
                match if config.use_cache { cache.lookup(q, &next.designs) } else { None } {
                    Some(rt) => {
                        runtimes[q.id] = Some(rt);
                        step_hits += 1;
                    }
                    None => pending.push(q.id),
                }
            }

            // Lazy repartitioning: only tables the pending queries touch are
            // moved to match the new partitioning; eager mode syncs them all.
            let mut step_reparts = 0u64;
            let mut tables_to_sync: Vec<usize> = if config.lazy_repartitioning {
                let mut tables: Vec<usize> = pending
                    .iter()
                    .flat_map(|&qid| schema.queries[qid].scanned_tables.iter().map(|&(t, _)| t))
                    .collect();
                tables.sort_unstable();
                tables.dedup();
                tables
            } else {
                (0..schema.tables.len()).collect()
            };
            tables_to_sync.retain(|&t| sim.deployed()[t] != next.designs[t]);
            for t in tables_to_sync {
                sim.repartition_table(t, next.designs[t]);
                step_reparts += 1;
            }

            // Run the missing queries, aborting the step on a timeout.
            let mut step_execs = 0u64;
            let mut timed_out = false;
            for &qid in &pending {
                let q = &schema.queries[qid];
                let rt = sim.simulate_query(&next.designs, q);
                step_execs += 1;
                if config.use_timeouts {
                    if let Some(limit) = timeout_for(
                        denominator,
                        best_reward,
                        scale_factors[qid],
                        mix.frequencies[qid],
                    ) {
                        if rt > limit {
                            // The aborted measurement is not a true runtime;
                            // it never enters the cache.
                            timed_out = true;
                            timeout_count += 1;
                            break;
                        }
                    }
                }
                if config.use_cache {
                    cache.insert(q, &next.designs, rt);
                }
                runtimes[qid] = Some(rt);
            }

            let reward = if timed_out {
                // Pessimistic floor: slightly worse than the best known reward.
                best_reward * 1.05
            } else {
                let cost: f64 = schema
                    .queries
                    .iter()
                    .zip(&mix.frequencies)
                    .filter(|(_, &f)| f > 0.0)
                    .map(|(q, &f)| {
                        f * scale_factors[q.id]
                            * runtimes[q.id].expect("runtime present for weighted query")
                    })
                    .sum();
                let r = normalized_reward(cost, denominator)?;
                best_reward = best_reward.max(r);
                r
            };

            let next_encoded = encode_with(&layout, &next, &mix);
            let next_mask = legal_actions(&next, schema, &layout);
            agent.store_transition(Transition {
                state: encoded,
                action,
                reward,
                next_state: next_encoded.clone(),
                next_legal: next_mask,
            });
            let loss = agent.train_step(&mut rng);
            log.steps.push(StepLog {
                episode,
                step,
                action,
                reward,
                cache_hits: step_hits,
                executed_queries: step_execs,
                repartitions: step_reparts,
                epsilon,
                loss,
            });
            state = next;
            encoded = next_encoded;
        }
        agent.epsilon.advance();
        agent.soft_update(config.tau);
        agent.episodes_trained += 1;
    }
    Ok(TrainOutcome { agent, log, timeouts: timeout_count })
}

/// A query running longer than this bound makes its partitioning provably
/// worse than the best already seen, so execution can be aborted. `None` when
/// the query carries no weight.
pub fn timeout_for(denominator: f64, best_reward: f64, scale: f64, frequency: f64) -> Option<f64> {
    if frequency <= 0.0 || scale <= 0.0 || best_reward >= 0.0 {
        return None;
    }
    Some(-denominator * best_reward / (scale * frequency))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::brute_force_optimal;
    use crate::inference::recommend;
    use crate::sim::{SampledDatabase, SimProfile};
    use crate::testutil::{fact_dim_schema, test_deploy};

    fn quick_config(seed: u64) -> TrainConfig {
        TrainConfig {
            episodes: 50,
            max_steps: 12,
            hidden_layers: vec![32, 16],
            seed,
            mix_sampling: MixSampling::FixedOnes,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn timeout_formula_and_monotonicity() {
        // C = 100, r* = -0.5, s = 2, f = 1 -> 25 s.
        assert_eq!(timeout_for(100.0, -0.5, 2.0, 1.0), Some(25.0));
        // Better best rewards shrink the bound.
        let loose = timeout_for(100.0, -0.9, 1.0, 1.0).unwrap();
        let tight = timeout_for(100.0, -0.3, 1.0, 1.0).unwrap();
        assert!(tight < loose);
        // A top-weight query may use the entire reference budget.
        assert_eq!(timeout_for(100.0, -1.0, 1.0, 1.0), Some(100.0));
        // Zero-frequency queries are never timed.
        assert_eq!(timeout_for(100.0, -0.5, 1.0, 0.0), None);
    }

    #[test]
    fn offline_log_shape_and_reward_signs() {
        let schema = fact_dim_schema(100_000, 100, 5_000, 100, 0.5);
        let config = quick_config(1);
        let outcome = train_offline(&schema, &test_deploy(), &config).unwrap();
        assert_eq!(outcome.log.steps.len(), config.episodes * config.max_steps);
        for s in &outcome.log.steps {
            assert!(s.reward <= 0.0, "reward {} at {}/{}", s.reward, s.episode, s.step);
        }
        // Epsilon after episode k is start * decay^k.
        for s in &outcome.log.steps {
            let expected = config.epsilon_start * config.epsilon_decay.powi(s.episode as i32);
            assert!((s.epsilon - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn offline_training_finds_the_brute_force_optimum_on_a_toy_schema() {
        let schema = fact_dim_schema(1_000_000, 100, 10_000, 100, 1.0);
        let deploy = test_deploy();
        let mix = WorkloadMix::all_ones(1);
        let mut model = CostModel::new(&schema, &deploy).unwrap();
        let optimum = {
            let mut scorer = WorkloadScorer::new(&mut model);
            brute_force_optimal(&schema, &mix, &mut scorer).unwrap()
        };
        let mut hits = 0;
        for seed in 0..10 {
            let outcome = train_offline(&schema, &deploy, &quick_config(seed)).unwrap();
            let mut model = CostModel::new(&schema, &deploy).unwrap();
            let mut scorer = WorkloadScorer::new(&mut model);
            let rec = recommend(&outcome.agent, mix.clone(), &schema, &mut scorer, 12).unwrap();
            let mut m2 = CostModel::new(&schema, &deploy).unwrap();
            let mut s2 = WorkloadScorer::new(&mut m2);
            let rec_cost = s2.workload_cost(&rec.state.designs, &schema, &mix).unwrap();
            if rec_cost <= optimum.cost * (1.0 + 1e-9) {
                hits += 1;
            }
        }
        assert!(hits >= 9, "only {hits}/10 seeds reached the optimum");
    }

    #[test]
    fn identical_seeds_reproduce_identical_logs() {
        let schema = fact_dim_schema(100_000, 100, 5_000, 100, 0.5);
        let config = TrainConfig {
            episodes: 8,
            max_steps: 10,
            hidden_layers: vec![16],
            seed: 77,
            ..TrainConfig::default()
        };
        let a = train_offline(&schema, &test_deploy(), &config).unwrap();
        let b = train_offline(&schema, &test_deploy(), &config).unwrap();
        assert_eq!(a.log.to_jsonl(), b.log.to_jsonl());
        assert_eq!(a.agent.net, b.agent.net);
    }

    #[test]
    fn online_cached_step_executes_and_repartitions_nothing() {
        let schema = fact_dim_schema(100_000, 100, 5_000, 100, 0.5);
        let profile = SimProfile::neutral(test_deploy());
        let db = SampledDatabase::full(&schema);
        let mut sim = ClusterSim::new(&schema, db, profile, 0).unwrap();
        let mut cache = RuntimeCache::new();
        let scale = vec![1.0; schema.queries.len()];
        let config = TrainConfig {
            episodes: 30,
            max_steps: 8,
            hidden_layers: vec![16],
            seed: 5,
            mix_sampling: MixSampling::FixedOnes,
            ..TrainConfig::default()
        };
        let outcome =
            train_online(&schema, &mut sim, &mut cache, &scale, &config, None).unwrap();
        // The design space is tiny; later episodes must be fully cached.
        let late: Vec<&StepLog> = outcome
            .log
            .steps
            .iter()
            .filter(|s| s.episode + 5 >= config.episodes)
            .collect();
        assert!(late.iter().all(|s| s.executed_queries == 0));
        assert!(late.iter().all(|s| s.repartitions == 0));
        assert!(late.iter().all(|s| s.cache_hits > 0));
        // Rewards stay in the contract range.
        assert!(outcome.log.steps.iter().all(|s| s.reward <= 0.0));
    }
}
