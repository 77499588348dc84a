//! Deterministic simulated execution backend. It stands in for a real
//! cluster during online training: it prices queries like the cost model but
//! can be made to diverge from it through profile knobs, so that online
//! refinement has something real to learn.
//!
//! With every knob at its neutral value and zero noise, simulated runtimes
//! equal the cost model estimate exactly.

use std::cell::Cell;
use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{query_cost_parts, DeploymentConfig, QueryCostSource};
use crate::error::{AdvisorError, Result};
use crate::schema::{Query, Schema, TableDesign, TableId};

/// Divergence knobs of the simulated backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimProfile {
    pub deploy: DeploymentConfig,
    /// Per-table exponent on scan time as a function of scanned bytes
    /// (relative to 1 MB). 1.0 is neutral.
    pub scan_exponent: HashMap<String, f64>,
    /// Fixed seconds added to every join that shuffles data.
    pub shuffle_latency: f64,
    /// Multiplier on the scan time of replicated tables. 1.0 is neutral.
    pub replication_scan_penalty: f64,
    /// Relative multiplicative noise amplitude, in [0, 0.05].
    pub noise_fraction: f64,
    /// Per-table sampling rate in (0, 1].
    pub sampling_rate: f64,
    /// Sampled tables never fall below this many rows (or their full size).
    pub min_sample_rows: u64,
}

impl Default for SimProfile {
    fn default() -> Self {
        SimProfile {
            deploy: DeploymentConfig::default(),
            scan_exponent: HashMap::new(),
            shuffle_latency: 0.0,
            replication_scan_penalty: 1.0,
            noise_fraction: 0.0,
            sampling_rate: 1.0,
            min_sample_rows: 100,
        }
    }
}

impl SimProfile {
    pub fn neutral(deploy: DeploymentConfig) -> Self {
        SimProfile { deploy, ..SimProfile::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.deploy.validate()?;
        if !(0.0..=0.05).contains(&self.noise_fraction) {
            return Err(AdvisorError::validation("noise_fraction must be in [0, 0.05]"));
        }
        if !(self.shuffle_latency.is_finite() && self.shuffle_latency >= 0.0) {
            return Err(AdvisorError::validation("shuffle_latency must be >= 0"));
        }
        if !(self.replication_scan_penalty.is_finite() && self.replication_scan_penalty > 0.0) {
            return Err(AdvisorError::validation("replication_scan_penalty must be > 0"));
        }
        for (table, exp) in &self.scan_exponent {
            if !(exp.is_finite() && *exp > 0.0) {
                return Err(AdvisorError::validation(format!(
                    "scan exponent for '{table}' must be > 0"
                )));
            }
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(AdvisorError::validation("sampling_rate must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Effective table sizes after sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledDatabase {
    pub rate: f64,
    pub min_rows: u64,
    pub row_counts: Vec<u64>,
}

impl SampledDatabase {
    pub fn new(schema: &Schema, rate: f64, min_rows: u64) -> Result<Self> {
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(AdvisorError::validation("sampling rate must be in (0, 1]"));
        }
        let row_counts = schema
            .tables
            .iter()
            .map(|t| {
                let sampled = (rate * t.row_count as f64).ceil() as u64;
                sampled.max(min_rows.min(t.row_count)).min(t.row_count)
            })
            .collect();
        Ok(SampledDatabase { rate, min_rows, row_counts })
    }

    /// The unsampled database.
    pub fn full(schema: &Schema) -> Self {
        SampledDatabase {
            rate: 1.0,
            min_rows: 0,
            row_counts: schema.tables.iter().map(|t| t.row_count).collect(),
        }
    }
}

/// Simulated cluster: tracks the physically deployed designs (for
/// repartitioning accounting) and prices query executions.
#[derive(Debug, Clone)]
pub struct ClusterSim<'a> {
    schema: &'a Schema,
    db: SampledDatabase,
    profile: SimProfile,
    skew: Vec<Vec<f64>>,
    scan_exp: Vec<f64>,
    seed: u64,
    deployed: Vec<TableDesign>,
    executions: Cell<u64>,
    repartitions: u64,
    repartition_seconds: f64,
}

impl<'a> ClusterSim<'a> {
    pub fn new(schema: &'a Schema, db: SampledDatabase, profile: SimProfile, seed: u64) -> Result<Self> {
        profile.validate()?;
        if db.row_counts.len() != schema.tables.len() {
            return Err(AdvisorError::validation(
                "sampled database does not match the schema's table count",
            ));
        }
        let skew = profile.deploy.resolve_skew(schema)?;
        let mut scan_exp = vec![1.0; schema.tables.len()];
        for (name, exp) in &profile.scan_exponent {
            let t = schema.table_index(name).ok_or_else(|| {
                AdvisorError::validation(format!("scan exponent references unknown table '{name}'"))
            })?;
            scan_exp[t] = *exp;
        }
        let deployed = schema.reference_partitioning().designs;
        Ok(ClusterSim {
            schema,
            db,
            profile,
            skew,
            scan_exp,
            seed,
            deployed,
            executions: Cell::new(0),
            repartitions: 0,
            repartition_seconds: 0.0,
        })
    }

    pub fn schema(&self) -> &'a Schema {
        self.schema
    }

    pub fn database(&self) -> &SampledDatabase {
        &self.db
    }

    pub fn profile(&self) -> &SimProfile {
        &self.profile
    }

    pub fn deployed(&self) -> &[TableDesign] {
        &self.deployed
    }

    /// Total simulated query executions so far.
    pub fn executions(&self) -> u64 {
        self.executions.get()
    }

    pub fn repartitions(&self) -> u64 {
        self.repartitions
    }

    pub fn repartition_seconds(&self) -> f64 {
        self.repartition_seconds
    }

    /// Measure one query under the given designs. Deterministic for a fixed
    /// seed; depends only on the designs of the tables the query scans.
    pub fn simulate_query(&self, designs: &[TableDesign], query: &Query) -> f64 {
        self.executions.set(self.executions.get() + 1);
        let parts = query_cost_parts(
            designs,
            query,
            self.schema,
            &self.db.row_counts,
            &self.profile.deploy,
            &self.skew,
        );
        let mut total = 0.0;
        for scan in &parts.scans {
            let mut seconds = scan.seconds * (scan.bytes / 1e6).powf(self.scan_exp[scan.table] - 1.0);
            if scan.replicated {
                seconds *= self.profile.replication_scan_penalty;
            }
            total += seconds;
        }
        for &shuffle in &parts.shuffles {
            total += shuffle;
            if shuffle > 0.0 {
                total += self.profile.shuffle_latency;
            }
        }
        total += parts.join_cpu;
        if self.profile.noise_fraction > 0.0 {
            total *= 1.0 + self.profile.noise_fraction * self.noise_unit(designs, query);
        }
        total
    }

    /// Physically move a table to a new design; returns the repartitioning
    /// time in seconds (0 for a no-op re-declaration).
    pub fn repartition_table(&mut self, table: TableId, design: TableDesign) -> f64 {
        if self.deployed[table] == design {
            return 0.0;
        }
        let bytes = self.db.row_counts[table] as f64 * self.schema.tables[table].row_width as f64;
        let nodes = self.profile.deploy.node_count as f64;
        let seconds = match design {
            // Rehashing leaves 1/n of the data in place.
            TableDesign::PartitionedBy(_) => {
                bytes * (nodes - 1.0) / nodes / self.profile.deploy.network_bandwidth
            }
            // Every other node receives a full copy.
            TableDesign::Replicated => {
                bytes * (nodes - 1.0) / self.profile.deploy.network_bandwidth
            }
        };
        self.deployed[table] = design;
        self.repartitions += 1;
        self.repartition_seconds += seconds;
        seconds
    }

    /// Noise in [-1, 1], a pure function of (seed, query, relevant designs)
    /// so that cached runtimes always equal fresh simulations.
    fn noise_unit(&self, designs: &[TableDesign], query: &Query) -> f64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x100000001b3);
        };
        mix(self.seed);
        mix(query.id as u64);
        for &(t, _) in &query.scanned_tables {
            match designs[t] {
                TableDesign::Replicated => mix(u64::MAX),
                TableDesign::PartitionedBy(slot) => mix(slot as u64 + 1),
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        rng.gen_range(-1.0..=1.0)
    }
}

impl QueryCostSource for ClusterSim<'_> {
    fn query_cost(&mut self, designs: &[TableDesign], query: &Query) -> f64 {
        self.simulate_query(designs, query)
    }
}

/// Per-query full-to-sample runtime ratios, measured once on a fixed
/// partitioning before online training starts.
pub fn compute_scale_factors(
    designs: &[TableDesign],
    schema: &Schema,
    sample_db: &SampledDatabase,
    profile: &SimProfile,
    seed: u64,
) -> Result<Vec<f64>> {
    let full = ClusterSim::new(schema, SampledDatabase::full(schema), profile.clone(), seed)?;
    let sample = ClusterSim::new(schema, sample_db.clone(), profile.clone(), seed)?;
    schema
        .queries
        .iter()
        .map(|q| {
            let on_sample = sample.simulate_query(designs, q);
            if on_sample <= 0.0 {
                return Err(AdvisorError::validation(format!(
                    "query {} has zero runtime on the sample; cannot derive a scale factor",
                    q.id
                )));
            }
            Ok(full.simulate_query(designs, q) / on_sample)
        })
        .collect()
}
