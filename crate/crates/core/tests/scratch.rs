//! Temporary exploration harness (deleted before release).

use partition_advisor::baselines::brute_force_optimal;
use partition_advisor::committee::{
    derive_references, extend_with_queries, train_experts, Committee, CommitteeConfig,
};
use partition_advisor::cost::WorkloadScorer;
use partition_advisor::inference::{recommend, CachedSimSource};
use partition_advisor::schema::{TableDesign, WorkloadMix};
use partition_advisor::sim::{ClusterSim, SampledDatabase, SimProfile};
use partition_advisor::testutil::*;
use partition_advisor::training::{
    train_offline, train_online, MixSampling, RuntimeCache, TrainConfig,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn render(schema: &partition_advisor::Schema, designs: &[TableDesign]) -> String {
    schema
        .tables
        .iter()
        .zip(designs)
        .map(|(t, d)| match d {
            TableDesign::Replicated => format!("{}=R", t.name),
            TableDesign::PartitionedBy(s) => format!("{}={}", t.name, t.slot_name(*s)),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn sim_workload_cost(
    sim: &ClusterSim,
    cache: &mut RuntimeCache,
    schema: &partition_advisor::Schema,
    designs: &[TableDesign],
    mix: &WorkloadMix,
) -> f64 {
    let mut src = CachedSimSource { cache, sim };
    let mut scorer = WorkloadScorer::new(&mut src);
    scorer.workload_cost(designs, schema, mix).unwrap()
}

/// Criterion 3 prototype: divergent profile (shuffle latency) flips the
/// optimum away from the cost model's.
#[test]
fn proto_online_beats_offline() {
    let schema = two_dim_schema();
    let deploy = test_deploy();
    let mut divergent = SimProfile::neutral(deploy.clone());
    divergent.shuffle_latency = 0.25;
    divergent.noise_fraction = 0.02;
    let mix = WorkloadMix::all_ones(3);
    let mut improved = 0;
    for seed in 0..5u64 {
        let offline_cfg = TrainConfig {
            episodes: 220,
            max_steps: 20,
            hidden_layers: vec![64, 32],
            seed,
            mix_sampling: MixSampling::FixedOnes,
            ..TrainConfig::default()
        };
        let offline = train_offline(&schema, &deploy, &offline_cfg).unwrap();
        let offline_rec = {
            let mut model = partition_advisor::CostModel::new(&schema, &deploy).unwrap();
            let mut scorer = WorkloadScorer::new(&mut model);
            recommend(&offline.agent, mix.clone(), &schema, &mut scorer, 20).unwrap()
        };
        let db = SampledDatabase::full(&schema);
        let mut sim = ClusterSim::new(&schema, db, divergent.clone(), seed).unwrap();
        let mut cache = RuntimeCache::new();
        let scale = vec![1.0; 3];
        let online_cfg = TrainConfig {
            episodes: 160,
            max_steps: 20,
            hidden_layers: vec![64, 32],
            seed: seed + 50,
            mix_sampling: MixSampling::FixedOnes,
            ..TrainConfig::default()
        };
        let online =
            train_online(&schema, &mut sim, &mut cache, &scale, &online_cfg, Some(&offline.agent))
                .unwrap();
        let online_rec = {
            let mut src = CachedSimSource { cache: &mut cache, sim: &sim };
            let mut scorer = WorkloadScorer::new(&mut src);
            recommend(&online.agent, mix.clone(), &schema, &mut scorer, 20).unwrap()
        };
        let off_cost = sim_workload_cost(&sim, &mut cache, &schema, &offline_rec.state.designs, &mix);
        let on_cost = sim_workload_cost(&sim, &mut cache, &schema, &online_rec.state.designs, &mix);
        println!(
            "seed {seed}: offline [{}] {:.5} vs online [{}] {:.5}",
            render(&schema, &offline_rec.state.designs),
            off_cost,
            render(&schema, &online_rec.state.designs),
            on_cost
        );
        assert!(on_cost <= off_cost * (1.0 + 1e-9), "online must not be worse");
        if on_cost < off_cost * (1.0 - 1e-9) {
            improved += 1;
        }
    }
    println!("strict improvements: {improved}/5");
}

/// Criterion 8 prototype: incremental extension vs from-scratch.
#[test]
fn proto_extension() {
    let base = committee_base_schema();
    let full = committee_schema();
    let deploy = committee_deploy();
    let profile = SimProfile::neutral(deploy.clone());
    let seed = 0u64;
    let committee_cfg = CommitteeConfig {
        expert_episodes: 150,
        refine_episodes: 30,
        ..CommitteeConfig::default()
    };

    // From-scratch pipeline on the full workload.
    let full_db = SampledDatabase::full(&full);
    let mut sim_full = ClusterSim::new(&full, full_db, profile.clone(), seed).unwrap();
    let mut cache_full = RuntimeCache::new();
    let scale_full = vec![1.0; full.queries.len()];
    let cfg_full = TrainConfig {
        episodes: 300,
        max_steps: 20,
        hidden_layers: vec![64, 32],
        seed,
        mix_sampling: MixSampling::Uniform,
        ..TrainConfig::default()
    };
    let naive_full = train_online(&full, &mut sim_full, &mut cache_full, &scale_full, &cfg_full, None)
        .unwrap()
        .agent;
    let refs_full = {
        let mut src = CachedSimSource { cache: &mut cache_full, sim: &sim_full };
        derive_references(&naive_full, &full, &mut src, &scale_full, &committee_cfg, 20).unwrap()
    };
    let (experts_full, _) = train_experts(
        &refs_full, &full, &mut sim_full, &mut cache_full, &scale_full, &cfg_full,
        &committee_cfg, &naive_full,
    )
    .unwrap();
    let scratch_execs = sim_full.executions();
    let committee_full = Committee {
        naive: naive_full,
        references: refs_full,
        experts: experts_full,
        scale_factors: scale_full,
        scale_anchor: full.reference_partitioning().designs,
        fingerprint: full.fingerprint(),
    };

    // Base pipeline on 3 queries, then extension.
    let base_db = SampledDatabase::full(&base);
    let mut sim_base = ClusterSim::new(&base, base_db, profile.clone(), seed).unwrap();
    let mut cache_base = RuntimeCache::new();
    let scale_base = vec![1.0; base.queries.len()];
    let cfg_base = TrainConfig {
        episodes: 300,
        max_steps: 20,
        hidden_layers: vec![64, 32],
        seed,
        mix_sampling: MixSampling::Uniform,
        ..TrainConfig::default()
    };
    let naive_base =
        train_online(&base, &mut sim_base, &mut cache_base, &scale_base, &cfg_base, None)
            .unwrap()
            .agent;
    let refs_base = {
        let mut src = CachedSimSource { cache: &mut cache_base, sim: &sim_base };
        derive_references(&naive_base, &base, &mut src, &scale_base, &committee_cfg, 20).unwrap()
    };
    let (experts_base, _) = train_experts(
        &refs_base, &base, &mut sim_base, &mut cache_base, &scale_base, &cfg_base,
        &committee_cfg, &naive_base,
    )
    .unwrap();
    let committee_base = Committee {
        naive: naive_base,
        references: refs_base,
        experts: experts_base,
        scale_factors: scale_base,
        scale_anchor: base.reference_partitioning().designs,
        fingerprint: base.fingerprint(),
    };

    // The cache from the base phase carries over: same keys, new schema
    // fingerprint only matters for import/export.
    let full_db2 = SampledDatabase::full(&full);
    let mut sim_ext = ClusterSim::new(&full, full_db2, profile.clone(), seed).unwrap();
    let mut cache_ext = RuntimeCache::new();
    // Rebuild the extension cache from the base one by re-keying (query ids
    // are unchanged).
    for (q, designs_runtime) in base.queries.iter().flat_map(|q| {
        // replay base cache entries through exports
        std::iter::once((q, ()))
    }) {
        let _ = (q, designs_runtime);
    }
    // Simpler: import base export against base, then reuse entries by
    // re-inserting through the full schema (same query ids).
    let base_export = cache_base.export(&base);
    for entry in &base_export.entries {
        let q = &full.queries[entry.query];
        let designs = {
            // Designs stored for scanned tables; rebuild a full design vector
            // with placeholders for unscanned tables.
            let mut designs = full.reference_partitioning().designs;
            for (spec, &(t, _)) in entry.designs.iter().zip(&q.scanned_tables) {
                designs[t] = match spec.mode.as_str() {
                    "replicated" => TableDesign::Replicated,
                    _ => TableDesign::PartitionedBy(
                        full.tables[t].slot_index(spec.key.as_deref().unwrap()).unwrap(),
                    ),
                };
            }
            designs
        };
        cache_ext.insert(q, &designs, entry.runtime);
    }
    let retrain_cfg = TrainConfig {
        episodes: 60,
        max_steps: 20,
        hidden_layers: vec![64, 32],
        seed: seed + 7,
        mix_sampling: MixSampling::Uniform,
        ..TrainConfig::default()
    };
    // Isolate: widened-but-unretrained naive on old-query mixes must match
    // the base naive; then check the retrained naive's single-agent quality.
    {
        let mut widened = committee_base.naive.clone();
        widened.widen_input(1, full.fingerprint());
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let mut same = 0;
        for _ in 0..30 {
            let raw3: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
            let mix3 = WorkloadMix::normalized(raw3.clone()).unwrap();
            let mut raw4 = raw3.clone();
            raw4.push(0.0);
            let mix4 = WorkloadMix::normalized(raw4).unwrap();
            let base_rec = {
                let mut src = CachedSimSource { cache: &mut cache_base, sim: &sim_base };
                let mut scorer = WorkloadScorer::new(&mut src);
                recommend(&committee_base.naive, mix3, &base, &mut scorer, 20).unwrap()
            };
            let wide_rec = {
                let mut src = CachedSimSource { cache: &mut cache_ext, sim: &sim_ext };
                let mut scorer = WorkloadScorer::new(&mut src);
                recommend(&widened, mix4, &full, &mut scorer, 20).unwrap()
            };
            if base_rec.state.designs == wide_rec.state.designs {
                same += 1;
            }
        }
        println!("widened-unretrained matches base recs: {same}/30");
    }
    let execs_before = sim_ext.executions();
    let committee_ext = extend_with_queries(
        committee_base,
        &base,
        &full,
        &mut sim_ext,
        &mut cache_ext,
        &retrain_cfg,
        &committee_cfg,
    )
    .unwrap();
    let ext_execs = sim_ext.executions() - execs_before;
    println!("from-scratch execs {scratch_execs}, extension execs {ext_execs}");
    println!("from-scratch references:");
    for r in &committee_full.references {
        println!("  {} probes {:?}", render(&full, &r.state.designs), r.probe_queries);
    }
    println!("extension references:");
    for r in &committee_ext.references {
        println!("  {} probes {:?}", render(&full, &r.state.designs), r.probe_queries);
    }
    {
        // Retrained naive single-agent hit rate on the full workload.
        let mut rng = ChaCha8Rng::seed_from_u64(777);
        let mut naive_hits = 0;
        for _ in 0..50 {
            let raw: Vec<f64> = (0..4).map(|_| rng.gen::<f64>()).collect();
            let mix = WorkloadMix::normalized(raw).unwrap();
            let optimum = {
                let mut src = CachedSimSource { cache: &mut cache_ext, sim: &sim_ext };
                let mut scorer = WorkloadScorer::new(&mut src);
                brute_force_optimal(&full, &mix, &mut scorer).unwrap()
            };
            let rec = {
                let mut src = CachedSimSource { cache: &mut cache_ext, sim: &sim_ext };
                let mut scorer = WorkloadScorer::new(&mut src);
                recommend(&committee_ext.naive, mix.clone(), &full, &mut scorer, 20).unwrap()
            };
            let mut src = CachedSimSource { cache: &mut cache_ext, sim: &sim_ext };
            let mut scorer = WorkloadScorer::new(&mut src);
            let cost = scorer.workload_cost(&rec.state.designs, &full, &mix).unwrap();
            if cost <= optimum.cost * (1.0 + 1e-9) {
                naive_hits += 1;
            }
        }
        println!("retrained naive hits: {naive_hits}/50");
    }

    // Hit rates over 200 mixes on the full workload.
    let mut rng = ChaCha8Rng::seed_from_u64(999);
    let mut hits = [0usize; 2];
    for _ in 0..200 {
        let raw: Vec<f64> = (0..full.queries.len()).map(|_| rng.gen::<f64>()).collect();
        let mix = WorkloadMix::normalized(raw).unwrap();
        let optimum = {
            let mut src = CachedSimSource { cache: &mut cache_full, sim: &sim_full };
            let mut scorer = WorkloadScorer::new(&mut src);
            brute_force_optimal(&full, &mix, &mut scorer).unwrap()
        };
        for (i, (committee, cache, sim)) in [
            (&committee_full, &mut cache_full, &sim_full),
            (&committee_ext, &mut cache_ext, &sim_ext),
        ]
        .into_iter()
        .enumerate()
        {
            let rec = {
                let mut src = CachedSimSource { cache, sim };
                partition_advisor::committee::recommend_committee(
                    committee,
                    mix.clone(),
                    &full,
                    &mut src,
                    20,
                )
                .unwrap()
            };
            let mut src = CachedSimSource { cache, sim };
            let mut scorer = WorkloadScorer::new(&mut src);
            let cost = scorer.workload_cost(&rec.state.designs, &full, &mix).unwrap();
            if cost <= optimum.cost * (1.0 + 1e-9) {
                hits[i] += 1;
            } else if i == 1 && hits[0] > hits[1] + 150 {
            }
            if i == 1 && cost > optimum.cost * (1.0 + 1e-9) && hits[0] % 50 == 0 {
                println!(
                    "ext miss: mix {:?} expert {:?} rec [{}] cost {cost:.5} vs opt [{}] {:.5}",
                    mix.frequencies.iter().map(|f| (f * 100.0).round() / 100.0).collect::<Vec<_>>(),
                    rec.expert,
                    render(&full, &rec.state.designs),
                    render(&full, &optimum.state.designs),
                    optimum.cost
                );
            }
        }
    }
    println!(
        "hit rates: from-scratch {}/200, extension {}/200 (execs {} vs {})",
        hits[0], hits[1], scratch_execs, ext_execs
    );
    assert!(ext_execs * 2 < scratch_execs, "extension must execute < 50%");
}

/// Criterion 5 prototype: timeouts trigger but do not change the final
/// recommendation on the same seed.
#[test]
fn proto_timeouts() {
    let schema = committee_schema();
    let deploy = committee_deploy();
    let profile = SimProfile::neutral(deploy.clone());
    let mix = WorkloadMix::all_ones(4);
    for seed in 0..3u64 {
        let mut recs = Vec::new();
        let mut triggered = 0;
        for use_timeouts in [false, true] {
            let db = SampledDatabase::full(&schema);
            let mut sim = ClusterSim::new(&schema, db, profile.clone(), seed).unwrap();
            let mut cache = RuntimeCache::new();
            let scale = vec![1.0; 4];
            let cfg = TrainConfig {
                episodes: 250,
                max_steps: 20,
                hidden_layers: vec![64, 32],
                seed,
                mix_sampling: MixSampling::Uniform,
                use_timeouts,
                ..TrainConfig::default()
            };
            let outcome = train_online(&schema, &mut sim, &mut cache, &scale, &cfg, None).unwrap();
            if use_timeouts {
                triggered = outcome.timeouts;
            }
            let rec = {
                let mut src = CachedSimSource { cache: &mut cache, sim: &sim };
                let mut scorer = WorkloadScorer::new(&mut src);
                recommend(&outcome.agent, mix.clone(), &schema, &mut scorer, 20).unwrap()
            };
            recs.push(rec.state.designs);
        }
        println!(
            "seed {seed}: timeouts fired {triggered}, same rec: {} ([{}] vs [{}])",
            recs[0] == recs[1],
            render(&schema, &recs[0]),
            render(&schema, &recs[1])
        );
    }
}
