//! The Markov-decision-process surface: one-hot state encoding, the fixed
//! action array with legality masking, transitions and normalized rewards.
//!
//! State layout: per table a block (replicated bit, one bit per design slot),
//! then one bit per edge, then the query frequency vector. Action layout: the
//! same per-table blocks (replicate, partition-by-slot) followed by one
//! toggle slot per edge, which activates the edge when inactive and
//! deactivates it when active.

use serde::Serialize;

use crate::cost::WorkloadScorer;
use crate::error::{AdvisorError, Result};
use crate::schema::{EdgeId, PartitioningState, Schema, TableDesign, TableId, WorkloadMix};

/// Flat numeric state vector fed to the Q-network.
pub type EncodedState = Vec<f64>;

/// Semantic meaning of an action id in a concrete state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ActionKind {
    Replicate(TableId),
    PartitionBy(TableId, usize),
    ActivateEdge(EdgeId),
    DeactivateEdge(EdgeId),
}

/// Deterministic id layout of states and actions for one schema.
#[derive(Debug, Clone)]
pub struct ActionLayout {
    /// Offset of each table's block in both the action array and the state
    /// vector prefix. Block i spans `1 + slot_count(i)` entries.
    pub table_offsets: Vec<usize>,
    /// First edge slot (actions) / edge bit (state).
    pub edge_offset: usize,
    pub edge_count: usize,
    pub query_count: usize,
}

impl ActionLayout {
    pub fn new(schema: &Schema) -> Self {
        let mut table_offsets = Vec::with_capacity(schema.tables.len());
        let mut offset = 0;
        for table in &schema.tables {
            table_offsets.push(offset);
            offset += 1 + table.slot_count();
        }
        ActionLayout {
            table_offsets,
            edge_offset: offset,
            edge_count: schema.edges.len(),
            query_count: schema.queries.len(),
        }
    }

    /// Number of actions: one replicate + one per slot per table, plus one
    /// toggle per edge.
    pub fn action_count(&self) -> usize {
        self.edge_offset + self.edge_count
    }

    /// Length of the encoded state: the table blocks and edge bits of the
    /// action space plus one frequency entry per query.
    pub fn state_len(&self) -> usize {
        self.action_count() + self.query_count
    }

    /// Which table block an id falls into, if any.
    fn table_of(&self, id: usize) -> Option<(TableId, usize)> {
        if id >= self.edge_offset {
            return None;
        }
        let t = match self.table_offsets.binary_search(&id) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        Some((t, id - self.table_offsets[t]))
    }

    /// Interpret an action id in the context of a state.
    pub fn action_kind(&self, id: usize, state: &PartitioningState) -> Result<ActionKind> {
        if id >= self.action_count() {
            return Err(AdvisorError::validation(format!(
                "action id {id} out of range (|A| = {})",
                self.action_count()
            )));
        }
        if let Some((t, within)) = self.table_of(id) {
            if within == 0 {
                Ok(ActionKind::Replicate(t))
            } else {
                Ok(ActionKind::PartitionBy(t, within - 1))
            }
        } else {
            let e = id - self.edge_offset;
            if state.active_edges.contains(&e) {
                Ok(ActionKind::DeactivateEdge(e))
            } else {
                Ok(ActionKind::ActivateEdge(e))
            }
        }
    }

    pub fn replicate_id(&self, table: TableId) -> usize {
        self.table_offsets[table]
    }

    pub fn partition_id(&self, table: TableId, slot: usize) -> usize {
        self.table_offsets[table] + 1 + slot
    }

    pub fn edge_id(&self, edge: EdgeId) -> usize {
        self.edge_offset + edge
    }
}

/// Fixed-layout one-hot encoding of (partitioning, workload mix).
pub fn encode(state: &PartitioningState, mix: &WorkloadMix, schema: &Schema) -> EncodedState {
    let layout = ActionLayout::new(schema);
    encode_with(&layout, state, mix)
}

pub fn encode_with(layout: &ActionLayout, state: &PartitioningState, mix: &WorkloadMix) -> EncodedState {
    let mut v = vec![0.0; layout.state_len()];
    for (t, design) in state.designs.iter().enumerate() {
        let base = layout.table_offsets[t];
        match design {
            TableDesign::Replicated => v[base] = 1.0,
            TableDesign::PartitionedBy(slot) => v[base + 1 + slot] = 1.0,
        }
    }
    for &e in &state.active_edges {
        v[layout.edge_offset + e] = 1.0;
    }
    let freq_base = layout.action_count();
    for (i, &f) in mix.frequencies.iter().enumerate() {
        v[freq_base + i] = f;
    }
    v
}

/// Exact inverse of [`encode`] for well-formed encodings.
pub fn decode(encoded: &EncodedState, schema: &Schema) -> Result<(PartitioningState, WorkloadMix)> {
    let layout = ActionLayout::new(schema);
    if encoded.len() != layout.state_len() {
        return Err(AdvisorError::validation(format!(
            "encoded state has length {}, expected {}",
            encoded.len(),
            layout.state_len()
        )));
    }
    let mut designs = Vec::with_capacity(schema.tables.len());
    for (t, table) in schema.tables.iter().enumerate() {
        let base = layout.table_offsets[t];
        let block = &encoded[base..base + 1 + table.slot_count()];
        let ones: Vec<usize> = block
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 1.0)
            .map(|(i, _)| i)
            .collect();
        if ones.len() != 1 || block.iter().any(|&b| b != 0.0 && b != 1.0) {
            return Err(AdvisorError::validation(format!(
                "table block {t} is not one-hot"
            )));
        }
        designs.push(if ones[0] == 0 {
            TableDesign::Replicated
        } else {
            TableDesign::PartitionedBy(ones[0] - 1)
        });
    }
    let mut active_edges = std::collections::BTreeSet::new();
    for e in 0..layout.edge_count {
        match encoded[layout.edge_offset + e] {
            b if b == 1.0 => {
                active_edges.insert(e);
            }
            b if b == 0.0 => {}
            _ => return Err(AdvisorError::validation(format!("edge bit {e} is not binary"))),
        }
    }
    let frequencies = encoded[layout.action_count()..].to_vec();
    Ok((
        PartitioningState { designs, active_edges },
        WorkloadMix { frequencies },
    ))
}

/// The attribute an active edge pins `table` to, if any.
fn pinned_attr(state: &PartitioningState, schema: &Schema, table: TableId) -> Option<usize> {
    state
        .active_edges
        .iter()
        .find_map(|&e| schema.edges[e].pinned_attr(table))
}

/// Boolean mask over action ids: true where the action may be taken.
pub fn legal_actions(state: &PartitioningState, schema: &Schema, layout: &ActionLayout) -> Vec<bool> {
    let mut mask = vec![false; layout.action_count()];
    for (t, table) in schema.tables.iter().enumerate() {
        let base = layout.table_offsets[t];
        let pinned = pinned_attr(state, schema, t);
        // Replicate: not already replicated, and no active edge touches the table.
        mask[base] = state.designs[t] != TableDesign::Replicated && pinned.is_none();
        for slot in 0..table.slot_count() {
            // Partition-by: must change the design and not contradict a pin.
            mask[base + 1 + slot] =
                pinned.is_none() && state.designs[t] != TableDesign::PartitionedBy(slot);
        }
    }
    for (e, edge) in schema.edges.iter().enumerate() {
        let id = layout.edge_offset + e;
        if state.active_edges.contains(&e) {
            // Toggling an active edge deactivates it; always allowed.
            mask[id] = true;
        } else {
            // Activation must not conflict with attributes pinned by other
            // active edges.
            let left_ok = pinned_attr(state, schema, edge.left_table)
                .map_or(true, |a| a == edge.left_attr);
            let right_ok = pinned_attr(state, schema, edge.right_table)
                .map_or(true, |a| a == edge.right_attr);
            mask[id] = left_ok && right_ok;
        }
    }
    mask
}

/// Apply a legal action, producing the successor state. Exactly one aspect of
/// the partitioning changes.
pub fn apply(
    state: &PartitioningState,
    action: usize,
    schema: &Schema,
    layout: &ActionLayout,
) -> Result<PartitioningState> {
    let mask = legal_actions(state, schema, layout);
    if !mask.get(action).copied().unwrap_or(false) {
        return Err(AdvisorError::IllegalAction {
            action,
            reason: format!("{:?}", layout.action_kind(action, state)?),
        });
    }
    let mut next = state.clone();
    match layout.action_kind(action, state)? {
        ActionKind::Replicate(t) => next.designs[t] = TableDesign::Replicated,
        ActionKind::PartitionBy(t, slot) => next.designs[t] = TableDesign::PartitionedBy(slot),
        ActionKind::ActivateEdge(e) => {
            let edge = &schema.edges[e];
            next.designs[edge.left_table] = TableDesign::PartitionedBy(edge.left_attr);
            next.designs[edge.right_table] = TableDesign::PartitionedBy(edge.right_attr);
            next.active_edges.insert(e);
        }
        ActionKind::DeactivateEdge(e) => {
            // Designs stay; follow-up actions may then repartition freely.
            next.active_edges.remove(&e);
        }
    }
    debug_assert!(schema.validate_state(&next).is_empty());
    Ok(next)
}

/// Negative cost of the partitioning normalized by the reference
/// partitioning's cost; always <= 0, and exactly -1 at the reference.
pub fn normalized_reward(workload_cost: f64, reference_cost: f64) -> Result<f64> {
    if !(reference_cost.is_finite() && reference_cost > 0.0) {
        return Err(AdvisorError::validation(format!(
            "reference partitioning cost must be positive, got {reference_cost}"
        )));
    }
    Ok(-workload_cost / reference_cost)
}

/// A rollout over the MDP bound to one workload mix: resets to the reference
/// partitioning and steps through legal actions, pricing rewards through a
/// scorer and the cached P0 denominator.
pub struct Rollout<'a> {
    pub schema: &'a Schema,
    pub layout: &'a ActionLayout,
    pub mix: WorkloadMix,
    pub denominator: f64,
    pub state: PartitioningState,
}

impl<'a> Rollout<'a> {
    pub fn start(
        schema: &'a Schema,
        layout: &'a ActionLayout,
        mix: WorkloadMix,
        scorer: &mut WorkloadScorer,
    ) -> Result<Self> {
        let state = schema.reference_partitioning();
        let denominator = scorer.workload_cost(&state.designs, schema, &mix)?;
        if !(denominator.is_finite() && denominator > 0.0) {
            return Err(AdvisorError::validation(format!(
                "reference partitioning cost must be positive, got {denominator}"
            )));
        }
        Ok(Rollout { schema, layout, mix, denominator, state })
    }

    pub fn encoded(&self) -> EncodedState {
        encode_with(self.layout, &self.state, &self.mix)
    }

    pub fn legal_mask(&self) -> Vec<bool> {
        legal_actions(&self.state, self.schema, self.layout)
    }

    /// Apply an action and return (next encoded state, reward).
    pub fn step(&mut self, action: usize, scorer: &mut WorkloadScorer) -> Result<(EncodedState, f64)> {
        let next = apply(&self.state, action, self.schema, self.layout)?;
        let cost = scorer.workload_cost(&next.designs, self.schema, &self.mix)?;
        let reward = normalized_reward(cost, self.denominator)?;
        self.state = next;
        Ok((self.encoded(), reward))
    }

    /// Reward of the current state, re-evaluated through the scorer.
    pub fn reward_of_current(&mut self, scorer: &mut WorkloadScorer) -> Result<f64> {
        let cost = scorer.workload_cost(&self.state.designs, self.schema, &self.mix)?;
        normalized_reward(cost, self.denominator)
    }
}
