//! Typed representation of schemas, queries, workloads and partitioning
//! configurations. Everything else in the crate speaks in terms of these
//! types.
//!
//! A schema is loaded from a JSON document (see [`Schema::parse`]); attribute
//! order, join-predicate order and query order in the document are preserved
//! and define all vector encodings downstream.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AdvisorError, Result};

pub type TableId = usize;
pub type EdgeId = usize;
pub type QueryId = usize;

/// A table attribute with a distinct-value estimate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub distinct_values: u64,
}

/// A table. Attribute order is fixed and stable; it defines the slot layout
/// used by state encodings and action ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub row_count: u64,
    /// Bytes per tuple.
    pub row_width: u64,
    pub attributes: Vec<Attribute>,
    /// Index into `attributes`; defaults to the first declared attribute.
    pub primary_key: usize,
    /// Declared composite partitioning candidates, each a list of attribute
    /// indexes. Each candidate occupies one design slot after the plain
    /// attributes.
    pub composite_keys: Vec<Vec<usize>>,
}

impl Table {
    /// Number of partitioning slots: one per attribute plus one per declared
    /// composite candidate.
    pub fn slot_count(&self) -> usize {
        self.attributes.len() + self.composite_keys.len()
    }

    pub fn bytes(&self) -> f64 {
        self.row_count as f64 * self.row_width as f64
    }

    /// Human-readable name of a design slot ("attr" or "a+b" for composites).
    pub fn slot_name(&self, slot: usize) -> String {
        if slot < self.attributes.len() {
            self.attributes[slot].name.clone()
        } else {
            let key = &self.composite_keys[slot - self.attributes.len()];
            key.iter()
                .map(|&a| self.attributes[a].name.as_str())
                .collect::<Vec<_>>()
                .join("+")
        }
    }

    /// Resolve a slot name back to its index.
    pub fn slot_index(&self, name: &str) -> Option<usize> {
        (0..self.slot_count()).find(|&s| self.slot_name(s) == name)
    }
}

/// A join-attribute pair between two tables. Activating it pins both tables
/// to be co-partitioned on these attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinEdge {
    pub id: EdgeId,
    pub left_table: TableId,
    /// Attribute index (plain attributes only, never a composite slot).
    pub left_attr: usize,
    pub right_table: TableId,
    pub right_attr: usize,
}

impl JoinEdge {
    /// The attribute this edge requires on `table`, if the edge touches it.
    pub fn pinned_attr(&self, table: TableId) -> Option<usize> {
        if self.left_table == table {
            Some(self.left_attr)
        } else if self.right_table == table {
            Some(self.right_attr)
        } else {
            None
        }
    }

    pub fn touches(&self, table: TableId) -> bool {
        self.left_table == table || self.right_table == table
    }
}

/// A workload query: a connected join graph over a set of scanned tables,
/// each scanned with a selectivity, plus an output-size weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: QueryId,
    /// Edge ids used by this query.
    pub join_graph: Vec<EdgeId>,
    /// (table, selectivity) pairs, ascending by table id.
    pub scanned_tables: Vec<(TableId, f64)>,
    pub weight: f64,
}

impl Query {
    pub fn selectivity(&self, table: TableId) -> Option<f64> {
        self.scanned_tables
            .iter()
            .find(|(t, _)| *t == table)
            .map(|(_, s)| *s)
    }

    pub fn scans(&self, table: TableId) -> bool {
        self.selectivity(table).is_some()
    }
}

/// The static database description: tables, derived join edges and the known
/// query set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub tables: Vec<Table>,
    pub edges: Vec<JoinEdge>,
    pub queries: Vec<Query>,
}

/// How a single table is laid out across the cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TableDesign {
    Replicated,
    /// Hash-partitioned by the given design slot (attribute or composite).
    PartitionedBy(usize),
}

/// A full partitioning configuration: one design per table plus the set of
/// active co-partitioning edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitioningState {
    pub designs: Vec<TableDesign>,
    pub active_edges: BTreeSet<EdgeId>,
}

impl PartitioningState {
    /// Two states are design-equal when their table designs match; active
    /// edges are scaffolding and do not affect cost.
    pub fn same_designs(&self, other: &PartitioningState) -> bool {
        self.designs == other.designs
    }
}

/// A normalized query-frequency vector: entries in [0, 1], the maximum entry
/// exactly 1 unless all entries are 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadMix {
    pub frequencies: Vec<f64>,
}

impl WorkloadMix {
    /// Normalize raw non-negative frequencies by their maximum.
    pub fn normalized(raw: Vec<f64>) -> Result<Self> {
        if raw.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(AdvisorError::validation(
                "workload frequencies must be finite and non-negative",
            ));
        }
        let max = raw.iter().cloned().fold(0.0_f64, f64::max);
        let frequencies = if max > 0.0 {
            raw.iter().map(|f| f / max).collect()
        } else {
            raw
        };
        Ok(WorkloadMix { frequencies })
    }

    /// The fixed mix where every query occurs equally frequently.
    pub fn all_ones(m: usize) -> Self {
        WorkloadMix {
            frequencies: vec![1.0; m],
        }
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }
}

/// One violated invariant of a [`PartitioningState`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateViolation {
    DesignCountMismatch { expected: usize, found: usize },
    UnknownEdge { edge: EdgeId },
    InvalidSlot { table: TableId, slot: usize },
    /// An active edge whose endpoint is not partitioned by the edge attribute
    /// (covers both replicated endpoints and wrong partitioning attributes).
    EdgeEndpointMismatch { edge: EdgeId, table: TableId },
    /// Two active edges pin the same table to different attributes.
    EdgeConflict { table: TableId, edge_a: EdgeId, edge_b: EdgeId },
}

impl fmt::Display for StateViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateViolation::DesignCountMismatch { expected, found } => {
                write!(f, "expected {expected} table designs, found {found}")
            }
            StateViolation::UnknownEdge { edge } => write!(f, "unknown edge id {edge}"),
            StateViolation::InvalidSlot { table, slot } => {
                write!(f, "table {table} partitioned by invalid slot {slot}")
            }
            StateViolation::EdgeEndpointMismatch { edge, table } => {
                write!(f, "active edge {edge} requires table {table} partitioned by its attribute")
            }
            StateViolation::EdgeConflict { table, edge_a, edge_b } => {
                write!(f, "active edges {edge_a} and {edge_b} pin table {table} to different attributes")
            }
        }
    }
}

impl Schema {
    /// Parse and validate a schema document.
    pub fn parse(json: &str) -> Result<Schema> {
        let doc: SchemaDoc = serde_json::from_str(json)
            .map_err(|e| AdvisorError::input(format!("malformed schema document: {e}")))?;
        Schema::from_document(doc)
    }

    pub fn table_index(&self, name: &str) -> Option<TableId> {
        self.tables.iter().position(|t| t.name == name)
    }

    pub fn query_count(&self) -> usize {
        self.queries.len()
    }

    /// SHA-256 over the canonical serialized schema; agents refuse to load
    /// against a schema they were not trained on.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("schema serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The reference partitioning P0: every table hash-partitioned by its
    /// primary key, no active edges.
    pub fn reference_partitioning(&self) -> PartitioningState {
        PartitioningState {
            designs: self
                .tables
                .iter()
                .map(|t| TableDesign::PartitionedBy(t.primary_key))
                .collect(),
            active_edges: BTreeSet::new(),
        }
    }

    /// Check every invariant of a partitioning state; the returned list is
    /// empty iff the state is valid.
    pub fn validate_state(&self, state: &PartitioningState) -> Vec<StateViolation> {
        let mut violations = Vec::new();
        if state.designs.len() != self.tables.len() {
            violations.push(StateViolation::DesignCountMismatch {
                expected: self.tables.len(),
                found: state.designs.len(),
            });
            return violations;
        }
        for (t, design) in state.designs.iter().enumerate() {
            if let TableDesign::PartitionedBy(slot) = design {
                if *slot >= self.tables[t].slot_count() {
                    violations.push(StateViolation::InvalidSlot { table: t, slot: *slot });
                }
            }
        }
        let mut pinned: HashMap<TableId, (usize, EdgeId)> = HashMap::new();
        for &e in &state.active_edges {
            let Some(edge) = self.edges.get(e) else {
                violations.push(StateViolation::UnknownEdge { edge: e });
                continue;
            };
            for (table, attr) in [
                (edge.left_table, edge.left_attr),
                (edge.right_table, edge.right_attr),
            ] {
                if state.designs[table] != TableDesign::PartitionedBy(attr) {
                    violations.push(StateViolation::EdgeEndpointMismatch { edge: e, table });
                }
                match pinned.get(&table) {
                    Some(&(prev_attr, prev_edge)) if prev_attr != attr => {
                        violations.push(StateViolation::EdgeConflict {
                            table,
                            edge_a: prev_edge,
                            edge_b: e,
                        });
                    }
                    Some(_) => {}
                    None => {
                        pinned.insert(table, (attr, e));
                    }
                }
            }
        }
        violations
    }

    /// Extend this schema with additional queries over the same tables and
    /// join predicates. Existing query ids keep their meaning.
    pub fn with_additional_queries(&self, extra: Vec<Query>) -> Result<Schema> {
        let mut schema = self.clone();
        for q in extra {
            if q.id != schema.queries.len() {
                return Err(AdvisorError::validation(format!(
                    "new query id {} must extend the existing range (expected {})",
                    q.id,
                    schema.queries.len()
                )));
            }
            validate_query(&q, &schema.tables, &schema.edges)?;
            schema.queries.push(q);
        }
        Ok(schema)
    }

    /// Check that `extended` is this schema plus appended queries.
    pub fn is_query_extension_of(&self, base: &Schema) -> bool {
        self.tables == base.tables
            && self.edges == base.edges
            && self.queries.len() >= base.queries.len()
            && self.queries[..base.queries.len()] == base.queries[..]
    }

    fn from_document(doc: SchemaDoc) -> Result<Schema> {
        let mut tables = Vec::with_capacity(doc.tables.len());
        let mut names = HashSet::new();
        for td in &doc.tables {
            if !names.insert(td.name.clone()) {
                return Err(AdvisorError::validation(format!(
                    "duplicate table name '{}'",
                    td.name
                )));
            }
            if td.attributes.is_empty() {
                return Err(AdvisorError::validation(format!(
                    "table '{}' declares no attributes",
                    td.name
                )));
            }
            if td.row_width == 0 {
                return Err(AdvisorError::validation(format!(
                    "table '{}': row_width must be positive",
                    td.name
                )));
            }
            let mut attr_names = HashSet::new();
            let mut attributes = Vec::with_capacity(td.attributes.len());
            for a in &td.attributes {
                if !attr_names.insert(a.name.clone()) {
                    return Err(AdvisorError::validation(format!(
                        "table '{}': duplicate attribute '{}'",
                        td.name, a.name
                    )));
                }
                if a.distinct_values == 0 {
                    return Err(AdvisorError::validation(format!(
                        "attribute '{}.{}': distinct_values must be >= 1",
                        td.name, a.name
                    )));
                }
                attributes.push(Attribute {
                    name: a.name.clone(),
                    distinct_values: a.distinct_values,
                });
            }
            let primary_key = match &td.primary_key {
                Some(pk) => attributes.iter().position(|a| &a.name == pk).ok_or_else(|| {
                    AdvisorError::validation(format!(
                        "table '{}': primary_key '{}' is not a declared attribute",
                        td.name, pk
                    ))
                })?,
                None => 0,
            };
            let mut composite_keys = Vec::new();
            for key in td.composite_keys.as_deref().unwrap_or(&[]) {
                let mut idxs = Vec::with_capacity(key.len());
                for name in key {
                    let idx = attributes.iter().position(|a| &a.name == name).ok_or_else(|| {
                        AdvisorError::validation(format!(
                            "table '{}': composite key references unknown attribute '{}'",
                            td.name, name
                        ))
                    })?;
                    idxs.push(idx);
                }
                let distinct: HashSet<_> = idxs.iter().collect();
                if distinct.len() < 2 {
                    return Err(AdvisorError::validation(format!(
                        "table '{}': composite keys must combine at least two distinct attributes",
                        td.name
                    )));
                }
                composite_keys.push(idxs);
            }
            tables.push(Table {
                name: td.name.clone(),
                row_count: td.row_count,
                row_width: td.row_width,
                attributes,
                primary_key,
                composite_keys,
            });
        }

        let mut edges = Vec::with_capacity(doc.join_predicates.len());
        let mut seen_pairs = HashSet::new();
        for (id, pred) in doc.join_predicates.iter().enumerate() {
            let (lt, la) = resolve_column(&tables, &pred.left)?;
            let (rt, ra) = resolve_column(&tables, &pred.right)?;
            if lt == rt {
                return Err(AdvisorError::validation(format!(
                    "join predicate {id}: self-joins are not supported"
                )));
            }
            let key = if (lt, la) < (rt, ra) { (lt, la, rt, ra) } else { (rt, ra, lt, la) };
            if !seen_pairs.insert(key) {
                return Err(AdvisorError::validation(format!(
                    "join predicate {id}: duplicate of an earlier predicate"
                )));
            }
            edges.push(JoinEdge {
                id,
                left_table: lt,
                left_attr: la,
                right_table: rt,
                right_attr: ra,
            });
        }

        let mut queries = Vec::with_capacity(doc.queries.len());
        for (pos, qd) in doc.queries.iter().enumerate() {
            if qd.id != pos {
                return Err(AdvisorError::validation(format!(
                    "query at position {pos} has id {} (ids must be 0..m-1 in order)",
                    qd.id
                )));
            }
            if qd.weight <= 0.0 || !qd.weight.is_finite() {
                return Err(AdvisorError::validation(format!(
                    "query {}: weight must be positive",
                    qd.id
                )));
            }
            let mut scanned = Vec::with_capacity(qd.tables.len());
            for qt in &qd.tables {
                let table = tables.iter().position(|t| t.name == qt.name).ok_or_else(|| {
                    AdvisorError::validation(format!(
                        "query {}: unknown table '{}'",
                        qd.id, qt.name
                    ))
                })?;
                if !(0.0..=1.0).contains(&qt.selectivity) {
                    return Err(AdvisorError::validation(format!(
                        "query {}: selectivity for '{}' must be in [0,1]",
                        qd.id, qt.name
                    )));
                }
                if scanned.iter().any(|(t, _)| *t == table) {
                    return Err(AdvisorError::validation(format!(
                        "query {}: table '{}' listed twice",
                        qd.id, qt.name
                    )));
                }
                scanned.push((table, qt.selectivity));
            }
            scanned.sort_by_key(|(t, _)| *t);
            let mut join_graph = qd.edges.clone();
            join_graph.sort_unstable();
            join_graph.dedup();
            let query = Query {
                id: qd.id,
                join_graph,
                scanned_tables: scanned,
                weight: qd.weight,
            };
            validate_query(&query, &tables, &edges)?;
            queries.push(query);
        }

        Ok(Schema { tables, edges, queries })
    }
}

fn validate_query(q: &Query, tables: &[Table], edges: &[JoinEdge]) -> Result<()> {
    if q.scanned_tables.is_empty() {
        return Err(AdvisorError::validation(format!(
            "query {}: scans no tables",
            q.id
        )));
    }
    for &(t, _) in &q.scanned_tables {
        if t >= tables.len() {
            return Err(AdvisorError::validation(format!(
                "query {}: unknown table id {t}",
                q.id
            )));
        }
    }
    let scanned: HashSet<TableId> = q.scanned_tables.iter().map(|(t, _)| *t).collect();
    for &e in &q.join_graph {
        let edge = edges.get(e).ok_or_else(|| {
            AdvisorError::validation(format!("query {}: unknown join predicate index {e}", q.id))
        })?;
        if !scanned.contains(&edge.left_table) || !scanned.contains(&edge.right_table) {
            return Err(AdvisorError::validation(format!(
                "query {}: edge {e} joins a table the query does not scan",
                q.id
            )));
        }
    }
    // The join graph must connect all scanned tables.
    if scanned.len() > 1 {
        let start = q.scanned_tables[0].0;
        let mut reached = HashSet::from([start]);
        let mut frontier = vec![start];
        while let Some(t) = frontier.pop() {
            for &e in &q.join_graph {
                let edge = &edges[e];
                if edge.touches(t) {
                    let other = if edge.left_table == t { edge.right_table } else { edge.left_table };
                    if reached.insert(other) {
                        frontier.push(other);
                    }
                }
            }
        }
        if reached.len() != scanned.len() {
            return Err(AdvisorError::validation(format!(
                "query {}: join graph does not connect all scanned tables",
                q.id
            )));
        }
    }
    Ok(())
}

fn resolve_column(tables: &[Table], column: &str) -> Result<(TableId, usize)> {
    let (tname, aname) = column.split_once('.').ok_or_else(|| {
        AdvisorError::input(format!("join predicate column '{column}' must be 'table.attribute'"))
    })?;
    let table = tables.iter().position(|t| t.name == tname).ok_or_else(|| {
        AdvisorError::validation(format!("join predicate references unknown table '{tname}'"))
    })?;
    let attr = tables[table]
        .attributes
        .iter()
        .position(|a| a.name == aname)
        .ok_or_else(|| {
            AdvisorError::validation(format!(
                "join predicate references unknown attribute '{tname}.{aname}'"
            ))
        })?;
    Ok((table, attr))
}

/// Name-based rendering of a table design, used by manifests, cache exports
/// and reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub table: String,
    pub mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
}

impl DesignSpec {
    pub fn render(schema: &Schema, designs: &[TableDesign]) -> Vec<DesignSpec> {
        schema
            .tables
            .iter()
            .zip(designs)
            .map(|(t, d)| match d {
                TableDesign::Replicated => DesignSpec {
                    table: t.name.clone(),
                    mode: "replicated".to_string(),
                    key: None,
                },
                TableDesign::PartitionedBy(slot) => DesignSpec {
                    table: t.name.clone(),
                    mode: "partitioned".to_string(),
                    key: Some(t.slot_name(*slot)),
                },
            })
            .collect()
    }

    pub fn resolve(schema: &Schema, specs: &[DesignSpec]) -> Result<Vec<TableDesign>> {
        if specs.len() != schema.tables.len() {
            return Err(AdvisorError::validation(format!(
                "design list has {} entries, schema has {} tables",
                specs.len(),
                schema.tables.len()
            )));
        }
        let mut designs = vec![TableDesign::Replicated; schema.tables.len()];
        for spec in specs {
            let t = schema.table_index(&spec.table).ok_or_else(|| {
                AdvisorError::validation(format!("design references unknown table '{}'", spec.table))
            })?;
            designs[t] = match spec.mode.as_str() {
                "replicated" => TableDesign::Replicated,
                "partitioned" => {
                    let key = spec.key.as_deref().ok_or_else(|| {
                        AdvisorError::validation(format!(
                            "partitioned design for '{}' is missing its key",
                            spec.table
                        ))
                    })?;
                    let slot = schema.tables[t].slot_index(key).ok_or_else(|| {
                        AdvisorError::validation(format!(
                            "design references unknown key '{}.{}'",
                            spec.table, key
                        ))
                    })?;
                    TableDesign::PartitionedBy(slot)
                }
                other => {
                    return Err(AdvisorError::validation(format!(
                        "unknown design mode '{other}'"
                    )))
                }
            };
        }
        Ok(designs)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaDoc {
    tables: Vec<TableDoc>,
    join_predicates: Vec<PredicateDoc>,
    queries: Vec<QueryDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TableDoc {
    name: String,
    row_count: u64,
    row_width: u64,
    attributes: Vec<AttrDoc>,
    #[serde(default)]
    primary_key: Option<String>,
    #[serde(default)]
    composite_keys: Option<Vec<Vec<String>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AttrDoc {
    name: String,
    distinct_values: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredicateDoc {
    left: String,
    right: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryDoc {
    id: usize,
    tables: Vec<QueryTableDoc>,
    edges: Vec<usize>,
    weight: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryTableDoc {
    name: String,
    selectivity: f64,
}
