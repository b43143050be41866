//! Shared agent memory: an append-only typed event log with rolling
//! aggregates.
//!
//! Agents see the last 500 raw events plus per-factor statistics; the full
//! log is retained so a run's every decision can be replayed from the dump.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Meta tags, restricted to the vocabulary the agent policies emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaTag {
    Effective,
    Ineffective,
    Deprecated,
    Improved,
    Rejected,
    Executed,
    InsufficientFactors,
    EmptyEnsembleSkipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Miner,
    Screener,
    Trader,
    System,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryEvent {
    pub day: NaiveDate,
    pub agent: AgentKind,
    pub kind: String,
    pub meta: Option<MetaTag>,
    pub payload: Value,
}

/// Aggregated statistics for one factor, kept across summarization.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FactorStats {
    pub validations: u32,
    pub last_mean_ic: Option<f64>,
    pub last_tag: Option<MetaTag>,
}

/// Rolling aggregate view agents work from.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MemorySummary {
    pub per_factor: BTreeMap<String, FactorStats>,
    /// Canonical prints of every candidate expression ever examined; the
    /// generator skips structural duplicates through this set.
    pub canonical_seen: BTreeSet<String>,
    pub candidates_examined: u64,
    pub counts_by_meta: BTreeMap<String, u64>,
}

const RECENT_WINDOW: usize = 500;

/// The shared memory H.
#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    events: Vec<MemoryEvent>,
    summary: MemorySummary,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, event: MemoryEvent) {
        if let Some(meta) = event.meta {
            let key = serde_json::to_value(meta).unwrap().as_str().unwrap().to_string();
            *self.summary.counts_by_meta.entry(key).or_insert(0) += 1;
        }
        if let Some(id) = event.payload.get("factor_id").and_then(Value::as_str) {
            let stats = self.summary.per_factor.entry(id.to_string()).or_default();
            if event.kind == "factor_validated" {
                stats.validations += 1;
                stats.last_mean_ic = event.payload.get("mean_ic").and_then(Value::as_f64);
            }
            if event.meta.is_some() {
                stats.last_tag = event.meta;
            }
        }
        self.events.push(event);
    }

    pub fn record(
        &mut self,
        day: NaiveDate,
        agent: AgentKind,
        kind: &str,
        meta: Option<MetaTag>,
        payload: Value,
    ) {
        self.append(MemoryEvent { day, agent, kind: kind.to_string(), meta, payload });
    }

    pub fn note_canonical(&mut self, canonical: String) -> bool {
        self.summary.candidates_examined += 1;
        self.summary.canonical_seen.insert(canonical)
    }

    pub fn seen_canonical(&self, canonical: &str) -> bool {
        self.summary.canonical_seen.contains(canonical)
    }

    /// Full event log (append order).
    pub fn events(&self) -> &[MemoryEvent] {
        &self.events
    }

    /// The agent-visible window: the last 500 raw events.
    pub fn recent_events(&self) -> &[MemoryEvent] {
        let n = self.events.len();
        &self.events[n.saturating_sub(RECENT_WINDOW)..]
    }

    pub fn summary(&self) -> &MemorySummary {
        &self.summary
    }

    pub fn count_meta(&self, tag: MetaTag) -> u64 {
        let key = serde_json::to_value(tag).unwrap().as_str().unwrap().to_string();
        self.summary.counts_by_meta.get(&key).copied().unwrap_or(0)
    }

    /// Newline-delimited JSON dump (`{"day","agent","kind","meta","payload"}`).
    pub fn dump_ndjson(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).unwrap());
            out.push('\n');
        }
        out
    }

    /// Parse a dump back into a store (summary rebuilt by replay).
    pub fn from_ndjson(text: &str) -> Result<Self, serde_json::Error> {
        let mut store = Self::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            store.append(serde_json::from_str(line)?);
        }
        Ok(store)
    }
}
