//! Committee of subspace experts: probe the naive agent with per-query
//! over-represented mixes to obtain reference partitionings, route workload
//! mixes to the reference with the best weighted sample cost, and train one
//! expert agent per reference. Supports incremental extension when new
//! queries join the workload.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{QueryCostSource, WorkloadScorer};
use crate::dqn::QAgent;
use crate::error::{AdvisorError, Result};
use crate::inference::{recommend, CachedSimSource, Recommendation};
use crate::schema::{DesignSpec, PartitioningState, QueryId, Schema, TableDesign, WorkloadMix};
use crate::sim::{compute_scale_factors, ClusterSim};
use crate::training::{train_online_routed, RuntimeCache, TrainConfig, TrainingLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommitteeConfig {
    /// Frequency of under-represented queries in probe vectors.
    pub f_low: f64,
    /// Frequency of the over-represented query (1.0 after normalization).
    pub f_high: f64,
    /// Episodes per expert.
    pub expert_episodes: usize,
    /// Episodes used to refresh kept experts during incremental extension.
    pub refine_episodes: usize,
    /// Rejection-sampling budget per routed mix.
    pub max_mix_draws: usize,
}

impl Default for CommitteeConfig {
    fn default() -> Self {
        CommitteeConfig {
            f_low: 0.1,
            f_high: 1.0,
            expert_episodes: 150,
            refine_episodes: 40,
            max_mix_draws: 10_000,
        }
    }
}

/// A deduplicated per-query optimum: the design the naive agent recommends
/// when one query dominates the mix, with cached sample costs for every query.
#[derive(Debug, Clone)]
pub struct ReferencePartitioning {
    pub state: PartitioningState,
    /// c_sample(reference, q_j) for all queries j.
    pub query_costs: Vec<f64>,
    /// Probe queries whose over-represented mix produced this reference.
    pub probe_queries: Vec<QueryId>,
}

#[derive(Debug)]
pub struct Committee {
    pub naive: QAgent,
    pub references: Vec<ReferencePartitioning>,
    pub experts: Vec<QAgent>,
    pub scale_factors: Vec<f64>,
    /// The partitioning the scale factors were measured on.
    pub scale_anchor: Vec<TableDesign>,
    pub fingerprint: String,
}

/// The probe mix for query `i`: f_high there, f_low everywhere else.
pub fn probe_mix(query: QueryId, query_count: usize, config: &CommitteeConfig) -> Result<WorkloadMix> {
    let mut raw = vec![config.f_low; query_count];
    raw[query] = config.f_high;
    WorkloadMix::normalized(raw)
}

/// Run the naive agent on every probe vector and deduplicate the resulting
/// partitionings by their table designs.
pub fn derive_references(
    naive: &QAgent,
    schema: &Schema,
    source: &mut dyn QueryCostSource,
    scale_factors: &[f64],
    config: &CommitteeConfig,
    max_steps: usize,
) -> Result<Vec<ReferencePartitioning>> {
    let mut references: Vec<ReferencePartitioning> = Vec::new();
    for i in 0..schema.queries.len() {
        let mix = probe_mix(i, schema.queries.len(), config)?;
        let rec = {
            let mut scorer = WorkloadScorer::with_scale(source, scale_factors);
            recommend(naive, mix, schema, &mut scorer, max_steps)?
        };
        if let Some(existing) = references
            .iter_mut()
            .find(|r| r.state.same_designs(&rec.state))
        {
            existing.probe_queries.push(i);
            continue;
        }
        let query_costs = schema
            .queries
            .iter()
            .map(|q| source.query_cost(&rec.state.designs, q))
            .collect();
        references.push(ReferencePartitioning {
            state: rec.state,
            query_costs,
            probe_queries: vec![i],
        });
    }
    Ok(references)
}

/// The reference whose weighted sample cost is lowest for the mix (highest
/// reward), ties to the lowest index.
pub fn assign_subspace(
    mix: &WorkloadMix,
    references: &[ReferencePartitioning],
    scale_factors: &[f64],
) -> Result<usize> {
    if references.is_empty() {
        return Err(AdvisorError::validation("committee has no reference partitionings"));
    }
    let mut best = 0usize;
    let mut best_cost = f64::INFINITY;
    for (k, reference) in references.iter().enumerate() {
        if reference.query_costs.len() != mix.len() || scale_factors.len() != mix.len() {
            return Err(AdvisorError::validation(
                "reference costs, scale factors and mix must have equal length",
            ));
        }
        let cost: f64 = mix
            .frequencies
            .iter()
            .enumerate()
            .map(|(j, &f)| f * scale_factors[j] * reference.query_costs[j])
            .sum();
        if cost < best_cost {
            best_cost = cost;
            best = k;
        }
    }
    Ok(best)
}

/// Uniform mixes rejected into subspace `k`; after the draw budget the probe
/// vectors of the reference serve as fallback.
fn routed_mix(
    k: usize,
    references: &[ReferencePartitioning],
    scale_factors: &[f64],
    query_count: usize,
    config: &CommitteeConfig,
    fallback_cursor: &mut usize,
    rng: &mut ChaCha8Rng,
) -> Result<WorkloadMix> {
    for _ in 0..config.max_mix_draws {
        let raw: Vec<f64> = (0..query_count).map(|_| rng.gen::<f64>()).collect();
        if raw.iter().all(|&f| f == 0.0) {
            continue;
        }
        let mix = WorkloadMix::normalized(raw)?;
        if assign_subspace(&mix, references, scale_factors)? == k {
            return Ok(mix);
        }
    }
    let probes = &references[k].probe_queries;
    let probe = probes[*fallback_cursor % probes.len()];
    *fallback_cursor += 1;
    probe_mix(probe, query_count, config)
}

/// Train one expert per reference, warm-started from the naive agent and fed
/// only mixes of its own subspace. Executions happen only on cache misses.
pub fn train_experts(
    references: &[ReferencePartitioning],
    schema: &Schema,
    sim: &mut ClusterSim,
    cache: &mut RuntimeCache,
    scale_factors: &[f64],
    train_config: &TrainConfig,
    config: &CommitteeConfig,
    naive: &QAgent,
) -> Result<(Vec<QAgent>, Vec<TrainingLog>)> {
    let mut experts = Vec::with_capacity(references.len());
    let mut logs = Vec::with_capacity(references.len());
    for k in 0..references.len() {
        let mut expert_config = train_config.clone();
        expert_config.episodes = config.expert_episodes;
        expert_config.keep_warm_buffer = true;
        expert_config.seed = train_config.seed.wrapping_add(0x9e3779b9 * (k as u64 + 1));
        let mut cursor = 0usize;
        let mut sampler = |rng: &mut ChaCha8Rng| {
            routed_mix(
                k,
                references,
                scale_factors,
                schema.queries.len(),
                config,
                &mut cursor,
                rng,
            )
        };
        let outcome = train_online_routed(
            schema,
            sim,
            cache,
            scale_factors,
            &expert_config,
            Some(naive),
            &mut sampler,
        )?;
        experts.push(outcome.agent);
        logs.push(outcome.log);
    }
    Ok((experts, logs))
}

/// Route the mix to its subspace expert and delegate to single-agent
/// inference.
pub fn recommend_committee(
    committee: &Committee,
    mix: WorkloadMix,
    schema: &Schema,
    source: &mut dyn QueryCostSource,
    max_steps: usize,
) -> Result<Recommendation> {
    if committee.fingerprint != schema.fingerprint() {
        return Err(AdvisorError::validation(
            "committee was trained for a different schema fingerprint",
        ));
    }
    let k = assign_subspace(&mix, &committee.references, &committee.scale_factors)?;
    let expert = committee.experts.get(k).ok_or_else(|| {
        AdvisorError::validation(format!("no expert trained for reference {k}"))
    })?;
    let mut scorer = WorkloadScorer::with_scale(source, &committee.scale_factors);
    let mut rec = recommend(expert, mix, schema, &mut scorer, max_steps)?;
    rec.expert = Some(k);
    Ok(rec)
}

/// Incremental training for an extended workload: widen the naive agent's
/// frequency inputs, retrain it on mixes that include the new queries,
/// re-derive references, and train experts only for references that did not
/// exist before. The runtime cache is reused throughout.
#[allow(clippy::too_many_arguments)]
pub fn extend_with_queries(
    committee: Committee,
    base_schema: &Schema,
    extended_schema: &Schema,
    sim: &mut ClusterSim,
    cache: &mut RuntimeCache,
    retrain_config: &TrainConfig,
    config: &CommitteeConfig,
) -> Result<Committee> {
    if !extended_schema.is_query_extension_of(base_schema) {
        return Err(AdvisorError::validation(
            "extended schema must keep tables, edges and existing queries unchanged",
        ));
    }
    if committee.fingerprint != base_schema.fingerprint() {
        return Err(AdvisorError::validation(
            "committee does not belong to the base schema",
        ));
    }
    let old_count = base_schema.queries.len();
    let new_count = extended_schema.queries.len();
    let added = new_count - old_count;
    let extended_fingerprint = extended_schema.fingerprint();

    // Scale factors of existing queries were measured once and stay; new
    // queries are measured on the same anchor partitioning.
    let all_factors = compute_scale_factors(
        &committee.scale_anchor,
        extended_schema,
        sim.database(),
        sim.profile(),
        0,
    )?;
    let mut scale_factors = committee.scale_factors.clone();
    scale_factors.extend_from_slice(&all_factors[old_count..]);

    // Widen the naive agent; zero-initialized input weights leave its
    // behavior on old-query mixes untouched until retraining.
    let mut naive = committee.naive.clone();
    naive.widen_input(added, extended_fingerprint.clone());

    if added > 0 {
        let mut retrain = retrain_config.clone();
        retrain.keep_warm_buffer = true;
        retrain.validate(extended_schema)?;
        let new_ids: Vec<QueryId> = (old_count..new_count).collect();
        let mut sampler = |rng: &mut ChaCha8Rng| -> Result<WorkloadMix> {
            // Uniform mixes, redrawn until a new query is meaningfully present.
            for _ in 0..1000 {
                let raw: Vec<f64> = (0..new_count).map(|_| rng.gen::<f64>()).collect();
                if raw.iter().all(|&f| f == 0.0) {
                    continue;
                }
                let mix = WorkloadMix::normalized(raw)?;
                if new_ids.iter().any(|&i| mix.frequencies[i] >= 0.1) {
                    return Ok(mix);
                }
            }
            let probe = new_ids[0];
            probe_mix(probe, new_count, config)
        };
        let outcome = train_online_routed(
            extended_schema,
            sim,
            cache,
            &scale_factors,
            &retrain,
            Some(&naive),
            &mut sampler,
        )?;
        naive = outcome.agent;
    }

    // Existing references survive with their cost vectors extended to the
    // new queries; the retrained naive only contributes references that are
    // design-distinct from every known one.
    let mut references: Vec<ReferencePartitioning> = Vec::new();
    let mut carried: Vec<Option<usize>> = Vec::new();
    {
        let mut source = CachedSimSource { cache, sim };
        for (old_k, old) in committee.references.iter().enumerate() {
            let mut query_costs = old.query_costs.clone();
            for q in &extended_schema.queries[old_count..] {
                query_costs.push(source.query_cost(&old.state.designs, q));
            }
            references.push(ReferencePartitioning {
                state: old.state.clone(),
                query_costs,
                probe_queries: old.probe_queries.clone(),
            });
            carried.push(Some(old_k));
        }
        let derived = derive_references(
            &naive,
            extended_schema,
            &mut source,
            &scale_factors,
            config,
            retrain_config.max_steps,
        )?;
        for reference in derived {
            if let Some(existing) = references
                .iter_mut()
                .find(|r| r.state.same_designs(&reference.state))
            {
                for probe in reference.probe_queries {
                    if !existing.probe_queries.contains(&probe) {
                        existing.probe_queries.push(probe);
                    }
                }
            } else {
                references.push(reference);
                carried.push(None);
            }
        }
    }

    // Kept experts are widened (and optionally refreshed from the shared
    // cache); a new expert is trained only where a new reference appeared.
    let mut experts = Vec::with_capacity(references.len());
    for (k, carried_from) in carried.iter().enumerate() {
        match carried_from {
            Some(old_k) => {
                let mut expert = committee.experts[*old_k].clone();
                expert.widen_input(added, extended_fingerprint.clone());
                if config.refine_episodes > 0 {
                    let mut refine = retrain_config.clone();
                    refine.keep_warm_buffer = true;
                    refine.episodes = config.refine_episodes;
                    refine.seed = retrain_config.seed.wrapping_add(0x51ed2701 * (k as u64 + 1));
                    let mut cursor = 0usize;
                    let mut sampler = |rng: &mut ChaCha8Rng| {
                        routed_mix(
                            k,
                            &references,
                            &scale_factors,
                            new_count,
                            config,
                            &mut cursor,
                            rng,
                        )
                    };
                    let outcome = train_online_routed(
                        extended_schema,
                        sim,
                        cache,
                        &scale_factors,
                        &refine,
                        Some(&expert),
                        &mut sampler,
                    )?;
                    expert = outcome.agent;
                }
                experts.push(expert);
            }
            None => {
                let mut expert_config = retrain_config.clone();
                expert_config.episodes = config.expert_episodes;
                expert_config.keep_warm_buffer = true;
                expert_config.seed =
                    retrain_config.seed.wrapping_add(0x9e3779b9 * (k as u64 + 1));
                let mut cursor = 0usize;
                let mut sampler = |rng: &mut ChaCha8Rng| {
                    routed_mix(
                        k,
                        &references,
                        &scale_factors,
                        new_count,
                        config,
                        &mut cursor,
                        rng,
                    )
                };
                let outcome = train_online_routed(
                    extended_schema,
                    sim,
                    cache,
                    &scale_factors,
                    &expert_config,
                    Some(&naive),
                    &mut sampler,
                )?;
                experts.push(outcome.agent);
            }
        }
    }

    Ok(Committee {
        naive,
        references,
        experts,
        scale_factors,
        scale_anchor: committee.scale_anchor,
        fingerprint: extended_fingerprint,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleManifest {
    version: u32,
    fingerprint: String,
    scale_factors: Vec<f64>,
    scale_anchor: Vec<DesignSpec>,
    references: Vec<ManifestReference>,
    naive: String,
    experts: Vec<String>,
    cache: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestReference {
    designs: Vec<DesignSpec>,
    active_edges: Vec<usize>,
    query_costs: Vec<f64>,
    probe_queries: Vec<QueryId>,
}

impl Committee {
    /// Write the committee bundle: manifest, agent checkpoints and the shared
    /// runtime cache.
    pub fn save_bundle(&self, dir: &Path, schema: &Schema, cache: &RuntimeCache) -> Result<()> {
        fs::create_dir_all(dir)?;
        let naive_file = "naive.ckpt".to_string();
        self.naive.save(&dir.join(&naive_file))?;
        let mut expert_files = Vec::with_capacity(self.experts.len());
        for (k, expert) in self.experts.iter().enumerate() {
            let file = format!("expert_{k:03}.ckpt");
            expert.save(&dir.join(&file))?;
            expert_files.push(file);
        }
        let cache_file = "cache.json".to_string();
        fs::write(
            dir.join(&cache_file),
            serde_json::to_string_pretty(&cache.export(schema))?,
        )?;
        let manifest = BundleManifest {
            version: 1,
            fingerprint: self.fingerprint.clone(),
            scale_factors: self.scale_factors.clone(),
            scale_anchor: DesignSpec::render(schema, &self.scale_anchor),
            references: self
                .references
                .iter()
                .map(|r| ManifestReference {
                    designs: DesignSpec::render(schema, &r.state.designs),
                    active_edges: r.state.active_edges.iter().copied().collect(),
                    query_costs: r.query_costs.clone(),
                    probe_queries: r.probe_queries.clone(),
                })
                .collect(),
            naive: naive_file,
            experts: expert_files,
            cache: cache_file,
        };
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    pub fn load_bundle(dir: &Path, schema: &Schema) -> Result<(Committee, RuntimeCache)> {
        let manifest: BundleManifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
                .map_err(|e| AdvisorError::input(format!("malformed bundle manifest: {e}")))?;
        if manifest.version != 1 {
            return Err(AdvisorError::input(format!(
                "unsupported bundle version {}",
                manifest.version
            )));
        }
        let fingerprint = schema.fingerprint();
        if manifest.fingerprint != fingerprint {
            return Err(AdvisorError::validation(
                "bundle was trained for a different schema fingerprint",
            ));
        }
        let naive = QAgent::load(&dir.join(&manifest.naive), &fingerprint)?;
        let experts = manifest
            .experts
            .iter()
            .map(|f| QAgent::load(&dir.join(f), &fingerprint))
            .collect::<Result<Vec<_>>>()?;
        if experts.len() != manifest.references.len() {
            return Err(AdvisorError::validation(
                "bundle must contain exactly one expert per reference partitioning",
            ));
        }
        let references = manifest
            .references
            .iter()
            .map(|r| {
                let designs = DesignSpec::resolve(schema, &r.designs)?;
                let state = PartitioningState {
                    designs,
                    active_edges: r.active_edges.iter().copied().collect(),
                };
                if !schema.validate_state(&state).is_empty() {
                    return Err(AdvisorError::validation(
                        "bundle contains an invalid reference partitioning",
                    ));
                }
                if r.query_costs.len() != schema.queries.len() {
                    return Err(AdvisorError::validation(
                        "reference cost vector does not match the query count",
                    ));
                }
                Ok(ReferencePartitioning {
                    state,
                    query_costs: r.query_costs.clone(),
                    probe_queries: r.probe_queries.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let scale_anchor = DesignSpec::resolve(schema, &manifest.scale_anchor)?;
        let cache_export: crate::training::CacheExport =
            serde_json::from_str(&fs::read_to_string(dir.join(&manifest.cache))?)
                .map_err(|e| AdvisorError::input(format!("malformed bundle cache: {e}")))?;
        let cache = RuntimeCache::import(&cache_export, schema)?;
        Ok((
            Committee {
                naive,
                references,
                experts,
                scale_factors: manifest.scale_factors,
                scale_anchor,
                fingerprint,
            },
            cache,
        ))
    }
}
