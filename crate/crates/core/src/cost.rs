//! Analytical cost model for distributed query execution over a given
//! partitioning: full-table scans (parallel across nodes unless replicated),
//! shuffle for joins that are neither co-partitioned nor backed by a
//! replicated side, and per-tuple join CPU.
//!
//! Shuffle for a misaligned join is the cheaper of repartitioning the
//! misaligned inputs onto the join key and broadcasting the smaller input.


use serde::{Deserialize, Serialize};

use crate::error::{AdvisorError, Result};
use crate::schema::{Query, Schema, TableDesign, TableId, WorkloadMix};

/// Static skew declaration: hash-partitioning `table` by `attribute` puts
/// `multiplier` times the fair share of rows on the largest shard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkewEntry {
    pub table: String,
    pub attribute: String,
    pub multiplier: f64,
}

/// Hardware description of a deployment. Rates are bytes per second; costs
/// come out in seconds-equivalents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeploymentConfig {
    pub node_count: usize,
    pub network_bandwidth: f64,
    /// Scan rate of a single node.
    pub scan_throughput: f64,
    /// Seconds of CPU per joined input tuple.
    pub join_cpu_factor: f64,
    /// Disable to model transfer cost only.
    pub include_join_cpu: bool,
    pub skew: Vec<SkewEntry>,
}

impl Default for DeploymentConfig {
    fn default() -> Self {
        DeploymentConfig {
            node_count: 4,
            network_bandwidth: 1.25e9,
            scan_throughput: 1e8,
            join_cpu_factor: 1e-8,
            include_join_cpu: true,
            skew: Vec::new(),
        }
    }
}

impl DeploymentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.node_count == 0 {
            return Err(AdvisorError::validation("node_count must be positive"));
        }
        for (name, v) in [
            ("network_bandwidth", self.network_bandwidth),
            ("scan_throughput", self.scan_throughput),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(AdvisorError::validation(format!("{name} must be > 0")));
            }
        }
        if !(self.join_cpu_factor.is_finite() && self.join_cpu_factor >= 0.0) {
            return Err(AdvisorError::validation("join_cpu_factor must be >= 0"));
        }
        for entry in &self.skew {
            if !(entry.multiplier.is_finite() && entry.multiplier >= 1.0) {
                return Err(AdvisorError::validation(format!(
                    "skew multiplier for {}.{} must be >= 1",
                    entry.table, entry.attribute
                )));
            }
        }
        Ok(())
    }

    /// Resolve skew entries into a per-table, per-slot multiplier matrix.
    pub fn resolve_skew(&self, schema: &Schema) -> Result<Vec<Vec<f64>>> {
        let mut matrix: Vec<Vec<f64>> = schema
            .tables
            .iter()
            .map(|t| vec![1.0; t.slot_count()])
            .collect();
        for entry in &self.skew {
            let t = schema.table_index(&entry.table).ok_or_else(|| {
                AdvisorError::validation(format!("skew entry references unknown table '{}'", entry.table))
            })?;
            let slot = schema.tables[t].slot_index(&entry.attribute).ok_or_else(|| {
                AdvisorError::validation(format!(
                    "skew entry references unknown attribute '{}.{}'",
                    entry.table, entry.attribute
                ))
            })?;
            matrix[t][slot] = entry.multiplier;
        }
        Ok(matrix)
    }
}

/// Diagnostic decomposition of a query cost estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub scan_cost: f64,
    pub shuffle_cost: f64,
    pub join_cost: f64,
    pub total: f64,
}

/// One scan component of a query plan, kept separate so the simulator can
/// perturb it per table.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ScanPart {
    pub table: TableId,
    pub seconds: f64,
    pub bytes: f64,
    pub replicated: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct CostParts {
    pub scans: Vec<ScanPart>,
    pub shuffles: Vec<f64>,
    pub join_cpu: f64,
}

impl CostParts {
    pub fn breakdown(&self) -> CostBreakdown {
        let scan_cost: f64 = self.scans.iter().map(|s| s.seconds).sum();
        let shuffle_cost: f64 = self.shuffles.iter().sum();
        CostBreakdown {
            scan_cost,
            shuffle_cost,
            join_cost: self.join_cpu,
            total: scan_cost + shuffle_cost + self.join_cpu,
        }
    }
}

/// Shared plan arithmetic for the cost model and the simulator. `row_counts`
/// lets the simulator substitute sampled table sizes.
pub(crate) fn query_cost_parts(
    designs: &[TableDesign],
    query: &Query,
    schema: &Schema,
    row_counts: &[u64],
    deploy: &DeploymentConfig,
    skew: &[Vec<f64>],
) -> CostParts {
    let nodes = deploy.node_count as f64;
    let mut scans = Vec::with_capacity(query.scanned_tables.len());
    for &(t, _) in &query.scanned_tables {
        let bytes = row_counts[t] as f64 * schema.tables[t].row_width as f64;
        let (seconds, replicated) = match designs[t] {
            TableDesign::Replicated => (bytes / deploy.scan_throughput, true),
            TableDesign::PartitionedBy(slot) => {
                // The scan finishes when the largest shard does.
                (bytes / (deploy.scan_throughput * nodes) * skew[t][slot], false)
            }
        };
        scans.push(ScanPart { table: t, seconds, bytes, replicated });
    }

    let mut shuffles = Vec::with_capacity(query.join_graph.len());
    let mut join_tuples = 0.0;
    for &e in &query.join_graph {
        let edge = &schema.edges[e];
        let sides = [
            (edge.left_table, edge.left_attr),
            (edge.right_table, edge.right_attr),
        ];
        let filtered_bytes = sides.map(|(t, _)| {
            row_counts[t] as f64
                * query.selectivity(t).unwrap_or(1.0)
                * schema.tables[t].row_width as f64
        });
        let filtered_tuples =
            sides.map(|(t, _)| row_counts[t] as f64 * query.selectivity(t).unwrap_or(1.0));
        join_tuples += filtered_tuples[0] + filtered_tuples[1];

        let any_replicated = sides.iter().any(|&(t, _)| designs[t] == TableDesign::Replicated);
        let co_partitioned = sides
            .iter()
            .all(|&(t, a)| designs[t] == TableDesign::PartitionedBy(a));
        let shuffle = if any_replicated || co_partitioned {
            0.0
        } else {
            // An existing distribution is only reusable when both sides sit
            // on the join key; otherwise the join rehashes both inputs into
            // a fresh distribution (each node keeps 1/n locally), or ships a
            // full copy of the smaller input to the other n-1 nodes.
            let repartition = (filtered_bytes[0] + filtered_bytes[1]) * (nodes - 1.0) / nodes
                / deploy.network_bandwidth;
            let broadcast = filtered_bytes[0].min(filtered_bytes[1]) * (nodes - 1.0)
                / deploy.network_bandwidth;
            repartition.min(broadcast)
        };
        shuffles.push(shuffle);
    }

    let join_cpu = if deploy.include_join_cpu {
        deploy.join_cpu_factor * query.weight * join_tuples / nodes
    } else {
        0.0
    };

    CostParts { scans, shuffles, join_cpu }
}

/// The analytical estimator c_m(P, q), bound to one schema and deployment.
#[derive(Debug, Clone)]
pub struct CostModel<'a> {
    schema: &'a Schema,
    deploy: DeploymentConfig,
    skew: Vec<Vec<f64>>,
    row_counts: Vec<u64>,
}

impl<'a> CostModel<'a> {
    pub fn new(schema: &'a Schema, deploy: &DeploymentConfig) -> Result<Self> {
        deploy.validate()?;
        let skew = deploy.resolve_skew(schema)?;
        Ok(CostModel {
            schema,
            deploy: deploy.clone(),
            skew,
            row_counts: schema.tables.iter().map(|t| t.row_count).collect(),
        })
    }

    pub fn schema(&self) -> &'a Schema {
        self.schema
    }

    /// Estimated cost of one query under the given table designs.
    pub fn query_breakdown(&self, designs: &[TableDesign], query: &Query) -> CostBreakdown {
        query_cost_parts(designs, query, self.schema, &self.row_counts, &self.deploy, &self.skew)
            .breakdown()
    }

    pub fn query_cost(&self, designs: &[TableDesign], query: &Query) -> f64 {
        self.query_breakdown(designs, query).total
    }

    /// Frequency-weighted workload cost: sum of f_j * c_m(P, q_j).
    pub fn workload_cost(&self, designs: &[TableDesign], mix: &WorkloadMix) -> Result<f64> {
        if mix.len() != self.schema.queries.len() {
            return Err(AdvisorError::validation(format!(
                "mix has {} frequencies, schema has {} queries",
                mix.len(),
                self.schema.queries.len()
            )));
        }
        Ok(self
            .schema
            .queries
            .iter()
            .zip(&mix.frequencies)
            .filter(|(_, &f)| f > 0.0)
            .map(|(q, &f)| f * self.query_cost(designs, q))
            .sum())
    }
}

/// Anything that can price a query under a set of table designs. Implemented
/// by the cost model, the simulator and the runtime cache composition.
pub trait QueryCostSource {
    fn query_cost(&mut self, designs: &[TableDesign], query: &Query) -> f64;
}

impl QueryCostSource for CostModel<'_> {
    fn query_cost(&mut self, designs: &[TableDesign], query: &Query) -> f64 {
        CostModel::query_cost(self, designs, query)
    }
}

/// A cost source plus optional per-query scale factors, evaluating weighted
/// workload costs and normalized rewards.
pub struct WorkloadScorer<'a> {
    pub source: &'a mut dyn QueryCostSource,
    pub scale_factors: Option<&'a [f64]>,
}

impl<'a> WorkloadScorer<'a> {
    pub fn new(source: &'a mut dyn QueryCostSource) -> Self {
        WorkloadScorer { source, scale_factors: None }
    }

    pub fn with_scale(source: &'a mut dyn QueryCostSource, scale: &'a [f64]) -> Self {
        WorkloadScorer { source, scale_factors: Some(scale) }
    }

    /// Sum of f_j * s_j * c(P, q_j) over queries with nonzero frequency.
    pub fn workload_cost(&mut self, designs: &[TableDesign], schema: &Schema, mix: &WorkloadMix) -> Result<f64> {
        if mix.len() != schema.queries.len() {
            return Err(AdvisorError::validation(format!(
                "mix has {} frequencies, schema has {} queries",
                mix.len(),
                schema.queries.len()
            )));
        }
        if let Some(scale) = self.scale_factors {
            if scale.len() != schema.queries.len() {
                return Err(AdvisorError::validation(
                    "scale factor vector length does not match query count",
                ));
            }
        }
        let mut total = 0.0;
        for (q, &f) in schema.queries.iter().zip(&mix.frequencies) {
            if f <= 0.0 {
                continue;
            }
            let s = self.scale_factors.map_or(1.0, |sf| sf[q.id]);
            total += f * s * self.source.query_cost(designs, q);
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::TableDesign::{PartitionedBy, Replicated};
    use crate::testutil::{fact_dim_schema, test_deploy};

    /// Hand-computed oracle for the two-partitioned-tables case:
    /// fact 1e6 rows x 100 B and dim 1e4 rows x 100 B, both partitioned on
    /// non-join keys, 4 nodes, bandwidth 1e8 B/s, scan 1e8 B/s/node, join
    /// CPU 1e-8 s/tuple, selectivities 1.0:
    ///   scan    = 1e8/(4e8) + 1e6/(4e8)             = 0.2525
    ///   shuffle = min((1e8+1e6)*0.75/1e8, 1e6*3/1e8) = min(0.7575, 0.03) = 0.03
    ///   join    = 1e-8 * (1e6+1e4)/4                 = 0.002525
    #[test]
    fn shuffle_is_min_of_repartition_and_broadcast() {
        let schema = fact_dim_schema(1_000_000, 100, 10_000, 100, 1.0);
        let model = CostModel::new(&schema, &test_deploy()).unwrap();
        // Both tables partitioned on their non-join attribute (slot 0 = pk).
        let designs = vec![PartitionedBy(0), PartitionedBy(0)];
        let b = model.query_breakdown(&designs, &schema.queries[0]);
        assert!((b.scan_cost - 0.2525).abs() < 1e-12, "scan {}", b.scan_cost);
        assert!((b.shuffle_cost - 0.03).abs() < 1e-12, "shuffle {}", b.shuffle_cost);
        assert!((b.join_cost - 0.002525).abs() < 1e-12, "join {}", b.join_cost);
        assert!((b.total - 0.285025).abs() < 1e-12, "total {}", b.total);
        assert_eq!(b.total, b.scan_cost + b.shuffle_cost + b.join_cost);
    }

    #[test]
    fn co_partitioned_join_has_zero_shuffle() {
        let schema = fact_dim_schema(1_000_000, 100, 10_000, 100, 1.0);
        let model = CostModel::new(&schema, &test_deploy()).unwrap();
        // Join attributes: fact slot 1, dim slot 0 (its pk is the join key).
        let designs = vec![PartitionedBy(1), PartitionedBy(0)];
        let b = model.query_breakdown(&designs, &schema.queries[0]);
        assert_eq!(b.shuffle_cost, 0.0);
        assert!(b.total > 0.0);
    }

    #[test]
    fn replicated_side_has_zero_shuffle_and_undistributed_scan() {
        let schema = fact_dim_schema(1_000_000, 100, 10_000, 100, 1.0);
        let model = CostModel::new(&schema, &test_deploy()).unwrap();
        let designs = vec![PartitionedBy(0), Replicated];
        let b = model.query_breakdown(&designs, &schema.queries[0]);
        assert_eq!(b.shuffle_cost, 0.0);
        // Fact scan divided by node_count, replicated dim scan not divided.
        let expected_scan = 1e8 / (4.0 * 1e8) + 1e6 / 1e8;
        assert!((b.scan_cost - expected_scan).abs() < 1e-12);
    }

    #[test]
    fn partial_alignment_still_pays_the_full_shuffle() {
        let schema = fact_dim_schema(1_000_000, 100, 10_000, 100, 1.0);
        let model = CostModel::new(&schema, &test_deploy()).unwrap();
        // The dim sits on the join key but the fact does not; the join still
        // rehashes both inputs (or broadcasts the dim, which wins here).
        let designs = vec![PartitionedBy(0), PartitionedBy(0)];
        let half_aligned = model.query_breakdown(&designs, &schema.queries[0]).shuffle_cost;
        assert!((half_aligned - 0.03).abs() < 1e-12);
        // Repartitioning both inputs wins once the dim is small enough that
        // broadcast's (n-1) factor hurts more: 100 rows x 100 B dim against a
        // 10 B-wide fact sample.
        let schema2 = fact_dim_schema(1_000, 10, 100, 100, 1.0);
        let model2 = CostModel::new(&schema2, &test_deploy()).unwrap();
        let b2 = model2.query_breakdown(&vec![PartitionedBy(0), PartitionedBy(0)], &schema2.queries[0]);
        // repartition-both = (1e4 + 1e4) * 0.75 / 1e8 vs broadcast = 1e4*3/1e8.
        assert!((b2.shuffle_cost - 2e4 * 0.75 / 1e8).abs() < 1e-15);
    }

    #[test]
    fn skew_multiplies_partitioned_scan() {
        let schema = fact_dim_schema(1_000_000, 100, 10_000, 100, 1.0);
        let mut deploy = test_deploy();
        deploy.skew.push(SkewEntry {
            table: "fact".into(),
            attribute: "f_pk".into(),
            multiplier: 2.0,
        });
        let model = CostModel::new(&schema, &deploy).unwrap();
        let designs = vec![PartitionedBy(0), Replicated];
        let b = model.query_breakdown(&designs, &schema.queries[0]);
        let expected_scan = 2.0 * 1e8 / (4.0 * 1e8) + 1e6 / 1e8;
        assert!((b.scan_cost - expected_scan).abs() < 1e-12);
    }

    #[test]
    fn workload_cost_is_linear_in_frequencies() {
        let schema = fact_dim_schema(1_000_000, 100, 10_000, 100, 1.0);
        let model = CostModel::new(&schema, &test_deploy()).unwrap();
        let designs = vec![PartitionedBy(0), PartitionedBy(0)];
        let zero = model
            .workload_cost(&designs, &WorkloadMix { frequencies: vec![0.0] })
            .unwrap();
        assert_eq!(zero, 0.0);
        let one = model
            .workload_cost(&designs, &WorkloadMix { frequencies: vec![1.0] })
            .unwrap();
        assert_eq!(one, model.query_cost(&designs, &schema.queries[0]));
        let half = model
            .workload_cost(&designs, &WorkloadMix { frequencies: vec![0.5] })
            .unwrap();
        assert!((half - 0.5 * one).abs() < 1e-15);
        // Length mismatch is an error.
        assert!(model
            .workload_cost(&designs, &WorkloadMix { frequencies: vec![1.0, 1.0] })
            .is_err());
    }

    #[test]
    fn monotone_in_data_volume() {
        let base = fact_dim_schema(100_000, 100, 5_000, 100, 0.5);
        let scaled = fact_dim_schema(200_000, 100, 10_000, 100, 0.5);
        let deploy = test_deploy();
        let m1 = CostModel::new(&base, &deploy).unwrap();
        let m2 = CostModel::new(&scaled, &deploy).unwrap();
        for designs in [
            vec![PartitionedBy(0), PartitionedBy(0)],
            vec![PartitionedBy(1), PartitionedBy(0)],
            vec![PartitionedBy(0), Replicated],
            vec![Replicated, Replicated],
        ] {
            let a = m1.query_breakdown(&designs, &base.queries[0]);
            let b = m2.query_breakdown(&designs, &scaled.queries[0]);
            assert!(b.total >= a.total, "{designs:?}");
        }
    }
}
