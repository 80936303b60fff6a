//! Collected signals from one pipeline run: node signals by paper and
//! comparison verdicts by unordered pair. Persisted as line-delimited JSON.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::PaperId;
use crate::signals::{CanonicalVerdict, NodeSignal, SignalError};

#[derive(Debug, Clone, Default)]
pub struct SignalStore {
    nodes: BTreeMap<PaperId, NodeSignal>,
    verdicts: BTreeMap<(PaperId, PaperId), CanonicalVerdict>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum StoreRecord {
    Node(NodeSignal),
    Edge(CanonicalVerdict),
}

impl SignalStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_node(&mut self, signal: NodeSignal) {
        self.nodes.insert(signal.paper_id.clone(), signal);
    }

    pub fn insert_verdict(&mut self, verdict: CanonicalVerdict) {
        let key = (verdict.low_id.clone(), verdict.high_id.clone());
        self.verdicts.insert(key, verdict);
    }

    pub fn node(&self, id: &str) -> Option<&NodeSignal> {
        self.nodes.get(id)
    }

    pub fn verdict(&self, a: &str, b: &str) -> Option<&CanonicalVerdict> {
        let key = if a <= b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        };
        self.verdicts.get(&key)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeSignal> {
        self.nodes.values()
    }

    pub fn verdicts(&self) -> impl Iterator<Item = &CanonicalVerdict> {
        self.verdicts.values()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), SignalError> {
        let io_err = |e: std::io::Error| SignalError::Io(e.to_string());
        for node in self.nodes.values() {
            let line = serde_json::to_string(&StoreRecord::Node(node.clone()))
                .map_err(|e| SignalError::Io(e.to_string()))?;
            writeln!(w, "{line}").map_err(io_err)?;
        }
        for verdict in self.verdicts.values() {
            let line = serde_json::to_string(&StoreRecord::Edge(verdict.clone()))
                .map_err(|e| SignalError::Io(e.to_string()))?;
            writeln!(w, "{line}").map_err(io_err)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, SignalError> {
        let mut store = Self::new();
        for (no, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| SignalError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: StoreRecord = serde_json::from_str(&line)
                .map_err(|e| SignalError::Io(format!("signals line {}: {e}", no + 1)))?;
            match record {
                StoreRecord::Node(node) => store.insert_node(node),
                StoreRecord::Edge(verdict) => store.insert_verdict(verdict),
            }
        }
        Ok(store)
    }
}
