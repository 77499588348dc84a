//! Query runtime cache: memoizes measured runtimes keyed by the query and
//! the designs of exactly the tables it scans. States that differ only in
//! unrelated tables or edge bits share an entry.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{AdvisorError, Result};
use crate::schema::{DesignSpec, Query, QueryId, Schema, TableDesign};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub query: QueryId,
    /// Designs of the query's scanned tables, in ascending table order.
    pub designs: Vec<TableDesign>,
}

impl CacheKey {
    pub fn new(query: &Query, designs: &[TableDesign]) -> Self {
        CacheKey {
            query: query.id,
            designs: query.scanned_tables.iter().map(|&(t, _)| designs[t]).collect(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RuntimeCache {
    entries: HashMap<CacheKey, f64>,
    hits: u64,
    misses: u64,
}

impl RuntimeCache {
    pub fn new() -> Self {
        RuntimeCache::default()
    }

    pub fn lookup(&mut self, query: &Query, designs: &[TableDesign]) -> Option<f64> {
        let found = self.entries.get(&CacheKey::new(query, designs)).copied();
        match found {
            Some(_) => self.hits += 1,
            None => self.misses += 1,
        }
        found
    }

    /// Lookup without touching the hit/miss counters.
    pub fn peek(&self, query: &Query, designs: &[TableDesign]) -> Option<f64> {
        self.entries.get(&CacheKey::new(query, designs)).copied()
    }

    pub fn insert(&mut self, query: &Query, designs: &[TableDesign], runtime: f64) {
        self.entries.insert(CacheKey::new(query, designs), runtime);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    /// Serializable export, entries sorted for stable output.
    pub fn export(&self, schema: &Schema) -> CacheExport {
        let mut entries: Vec<CacheEntry> = self
            .entries
            .iter()
            .map(|(key, &runtime)| {
                let query = &schema.queries[key.query];
                let designs = query
                    .scanned_tables
                    .iter()
                    .zip(&key.designs)
                    .map(|(&(t, _), d)| render_design(schema, t, *d))
                    .collect();
                CacheEntry { query: key.query, designs, runtime }
            })
            .collect();
        entries.sort_by(|a, b| (a.query, format!("{:?}", a.designs)).cmp(&(b.query, format!("{:?}", b.designs))));
        CacheExport {
            version: 1,
            fingerprint: schema.fingerprint(),
            entries,
        }
    }

    pub fn import(export: &CacheExport, schema: &Schema) -> Result<RuntimeCache> {
        if export.version != 1 {
            return Err(AdvisorError::input(format!(
                "unsupported cache version {}",
                export.version
            )));
        }
        if export.fingerprint != schema.fingerprint() {
            return Err(AdvisorError::validation(
                "cache was recorded for a different schema fingerprint",
            ));
        }
        let mut cache = RuntimeCache::new();
        for entry in &export.entries {
            let query = schema.queries.get(entry.query).ok_or_else(|| {
                AdvisorError::validation(format!("cache entry references unknown query {}", entry.query))
            })?;
            if entry.designs.len() != query.scanned_tables.len() {
                return Err(AdvisorError::validation(format!(
                    "cache entry for query {} has {} designs, expected {}",
                    entry.query,
                    entry.designs.len(),
                    query.scanned_tables.len()
                )));
            }
            let designs: Result<Vec<TableDesign>> = query
                .scanned_tables
                .iter()
                .zip(&entry.designs)
                .map(|(&(t, _), spec)| resolve_design(schema, t, spec))
                .collect();
            cache.entries.insert(
                CacheKey { query: entry.query, designs: designs? },
                entry.runtime,
            );
        }
        Ok(cache)
    }
}

fn render_design(schema: &Schema, table: usize, design: TableDesign) -> DesignSpec {
    let t = &schema.tables[table];
    match design {
        TableDesign::Replicated => DesignSpec {
            table: t.name.clone(),
            mode: "replicated".into(),
            key: None,
        },
        TableDesign::PartitionedBy(slot) => DesignSpec {
            table: t.name.clone(),
            mode: "partitioned".into(),
            key: Some(t.slot_name(slot)),
        },
    }
}

fn resolve_design(schema: &Schema, table: usize, spec: &DesignSpec) -> Result<TableDesign> {
    let t = &schema.tables[table];
    if spec.table != t.name {
        return Err(AdvisorError::validation(format!(
            "cache entry design names table '{}', expected '{}'",
            spec.table, t.name
        )));
    }
    match spec.mode.as_str() {
        "replicated" => Ok(TableDesign::Replicated),
        "partitioned" => {
            let key = spec.key.as_deref().ok_or_else(|| {
                AdvisorError::validation("partitioned cache entry is missing its key")
            })?;
            let slot = t.slot_index(key).ok_or_else(|| {
                AdvisorError::validation(format!("cache entry references unknown key '{}.{key}'", t.name))
            })?;
            Ok(TableDesign::PartitionedBy(slot))
        }
        other => Err(AdvisorError::validation(format!("unknown design mode '{other}'"))),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheExport {
    pub version: u32,
    pub fingerprint: String,
    pub entries: Vec<CacheEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheEntry {
    pub query: QueryId,
    pub designs: Vec<DesignSpec>,
    pub runtime: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::TableDesign::{PartitionedBy, Replicated};
    use crate::testutil::simplified_ssb;

    #[test]
    fn repeat_visits_hit() {
        let schema = simplified_ssb();
        let mut cache = RuntimeCache::new();
        let designs = schema.reference_partitioning().designs;
        assert!(cache.lookup(&schema.queries[0], &designs).is_none());
        cache.insert(&schema.queries[0], &designs, 1.5);
        assert_eq!(cache.lookup(&schema.queries[0], &designs), Some(1.5));
        assert_eq!(cache.hits(), 1);
        assert_eq!(cache.misses(), 1);
    }

    #[test]
    fn key_ignores_unrelated_tables_and_edges() {
        let schema = simplified_ssb();
        let mut cache = RuntimeCache::new();
        // Query 0 scans lineorder and customer only; part's design is
        // irrelevant.
        let a = vec![PartitionedBy(1), PartitionedBy(0), PartitionedBy(0)];
        let b = vec![PartitionedBy(1), PartitionedBy(0), Replicated];
        cache.insert(&schema.queries[0], &a, 2.0);
        assert_eq!(cache.lookup(&schema.queries[0], &b), Some(2.0));
        // A scanned table's design does distinguish keys.
        let c = vec![Replicated, PartitionedBy(0), PartitionedBy(0)];
        assert!(cache.lookup(&schema.queries[0], &c).is_none());
    }

    #[test]
    fn export_import_round_trips() {
        let schema = simplified_ssb();
        let mut cache = RuntimeCache::new();
        let p0 = schema.reference_partitioning().designs;
        let alt = vec![PartitionedBy(2), Replicated, PartitionedBy(0)];
        cache.insert(&schema.queries[0], &p0, 0.5);
        cache.insert(&schema.queries[1], &p0, 0.75);
        cache.insert(&schema.queries[0], &alt, 0.25);
        let export = cache.export(&schema);
        let json = serde_json::to_string(&export).unwrap();
        let parsed: CacheExport = serde_json::from_str(&json).unwrap();
        let restored = RuntimeCache::import(&parsed, &schema).unwrap();
        assert_eq!(restored.len(), 3);
        assert_eq!(restored.peek(&schema.queries[0], &p0), Some(0.5));
        assert_eq!(restored.peek(&schema.queries[1], &p0), Some(0.75));
        assert_eq!(restored.peek(&schema.queries[0], &alt), Some(0.25));
        // Exports are deterministic.
        assert_eq!(json, serde_json::to_string(&restored.export(&schema)).unwrap());
    }
}
