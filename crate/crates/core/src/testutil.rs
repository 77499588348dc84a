//! Small schema builders shared by unit, property and acceptance tests.

use crate::cost::DeploymentConfig;
use crate::schema::Schema;

/// Simplified SSB: lineorder(lo_key, lo_custkey, lo_partkey),
/// customer(c_custkey), part(p_partkey), one join predicate per dimension and
/// one query per join.
pub fn simplified_ssb() -> Schema {
    Schema::parse(
        r#"{
        "tables": [
            {"name": "lineorder", "row_count": 600000, "row_width": 100,
             "attributes": [
                {"name": "lo_key", "distinct_values": 600000},
                {"name": "lo_custkey", "distinct_values": 30000},
                {"name": "lo_partkey", "distinct_values": 20000}
             ]},
            {"name": "customer", "row_count": 30000, "row_width": 100,
             "attributes": [{"name": "c_custkey", "distinct_values": 30000}]},
            {"name": "part", "row_count": 20000, "row_width": 60,
             "attributes": [{"name": "p_partkey", "distinct_values": 20000}]}
        ],
        "join_predicates": [
            {"left": "lineorder.lo_custkey", "right": "customer.c_custkey"},
            {"left": "lineorder.lo_partkey", "right": "part.p_partkey"}
        ],
        "queries": [
            {"id": 0, "tables": [
                {"name": "lineorder", "selectivity": 0.05},
                {"name": "customer", "selectivity": 1.0}
             ], "edges": [0], "weight": 1.0},
            {"id": 1, "tables": [
                {"name": "lineorder", "selectivity": 0.04},
                {"name": "part", "selectivity": 1.0}
             ], "edges": [1], "weight": 1.0}
        ]
    }"#,
    )
    .expect("ssb fixture parses")
}

/// A fact table (f_pk, f_dk) joined to a single dimension (d_pk) by one
/// predicate and one query scanning both with `fact_selectivity` on the fact.
pub fn fact_dim_schema(
    fact_rows: u64,
    fact_width: u64,
    dim_rows: u64,
    dim_width: u64,
    fact_selectivity: f64,
) -> Schema {
    Schema::parse(&format!(
        r#"{{
        "tables": [
            {{"name": "fact", "row_count": {fact_rows}, "row_width": {fact_width},
              "attributes": [
                {{"name": "f_pk", "distinct_values": {fact_rows}}},
                {{"name": "f_dk", "distinct_values": {dim_rows}}}
              ]}},
            {{"name": "dim", "row_count": {dim_rows}, "row_width": {dim_width},
              "attributes": [{{"name": "d_pk", "distinct_values": {dim_rows}}}]}}
        ],
        "join_predicates": [
            {{"left": "fact.f_dk", "right": "dim.d_pk"}}
        ],
        "queries": [
            {{"id": 0, "tables": [
                {{"name": "fact", "selectivity": {fact_selectivity}}},
                {{"name": "dim", "selectivity": 1.0}}
             ], "edges": [0], "weight": 1.0}}
        ]
    }}"#,
    ))
    .expect("fact/dim fixture parses")
}

/// Fact with two dimensions and three queries (two against dim1, one against
/// dim2). dim2 is the larger dimension, dim1 the more frequently joined one.
pub fn two_dim_schema() -> Schema {
    Schema::parse(
        r#"{
        "tables": [
            {"name": "fact", "row_count": 200000, "row_width": 200,
             "attributes": [
                {"name": "f_pk", "distinct_values": 200000},
                {"name": "f_d1", "distinct_values": 10000},
                {"name": "f_d2", "distinct_values": 20000}
             ]},
            {"name": "dim1", "row_count": 10000, "row_width": 100,
             "attributes": [{"name": "d1_pk", "distinct_values": 10000}]},
            {"name": "dim2", "row_count": 20000, "row_width": 100,
             "attributes": [{"name": "d2_pk", "distinct_values": 20000}]}
        ],
        "join_predicates": [
            {"left": "fact.f_d1", "right": "dim1.d1_pk"},
            {"left": "fact.f_d2", "right": "dim2.d2_pk"}
        ],
        "queries": [
            {"id": 0, "tables": [
                {"name": "fact", "selectivity": 0.05},
                {"name": "dim1", "selectivity": 1.0}
             ], "edges": [0], "weight": 1.0},
            {"id": 1, "tables": [
                {"name": "fact", "selectivity": 0.05},
                {"name": "dim2", "selectivity": 1.0}
             ], "edges": [1], "weight": 1.0},
            {"id": 2, "tables": [
                {"name": "fact", "selectivity": 0.02},
                {"name": "dim1", "selectivity": 1.0}
             ], "edges": [0], "weight": 1.0}
        ]
    }"#,
    )
    .expect("two-dim fixture parses")
}

/// The three-relation microbenchmark: fact `a` joined with dimensions `b`
/// and `c`, relation sizes scaled down 1000x from roughly 134.2M / 6.7M /
/// 33.6M tuples.
pub fn microbenchmark_schema() -> Schema {
    Schema::parse(include_str!("../../../testdata/micro.json")).expect("micro fixture parses")
}

/// Fact with two dimensions and four queries; query frequencies decide
/// whether co-partitioning dim1 or dim2 (or replicating one of them) wins.
pub fn committee_schema() -> Schema {
    Schema::parse(include_str!("../../../testdata/committee.json"))
        .expect("committee fixture parses")
}

/// The committee schema without its last query.
pub fn committee_base_schema() -> Schema {
    Schema::parse(include_str!("../../../testdata/committee_base.json"))
        .expect("committee base fixture parses")
}

/// Deployments of the microbenchmark: 0.6 Gbps and 10 Gbps interconnects.
pub fn micro_deploy(bandwidth_bytes_per_sec: f64) -> DeploymentConfig {
    DeploymentConfig {
        node_count: 4,
        network_bandwidth: bandwidth_bytes_per_sec,
        scan_throughput: 2.2e8,
        join_cpu_factor: 1e-8,
        include_join_cpu: true,
        skew: Vec::new(),
    }
}

pub const SLOW_NETWORK: f64 = 0.6e9 / 8.0;
pub const FAST_NETWORK: f64 = 10.0e9 / 8.0;

/// Deployment of the committee scenario: 2 Gbps-class interconnect where
/// partitioning, co-partitioning and replication all win somewhere in mix
/// space.
pub fn committee_deploy() -> DeploymentConfig {
    DeploymentConfig {
        node_count: 4,
        network_bandwidth: 2.5e8,
        scan_throughput: 1e8,
        join_cpu_factor: 1e-8,
        include_join_cpu: true,
        skew: Vec::new(),
    }
}

/// 4 nodes, 1e8 B/s network and per-node scan, 1e-8 s/tuple join CPU.
pub fn test_deploy() -> DeploymentConfig {
    DeploymentConfig {
        node_count: 4,
        network_bandwidth: 1e8,
        scan_throughput: 1e8,
        join_cpu_factor: 1e-8,
        include_join_cpu: true,
        skew: Vec::new(),
    }
}
