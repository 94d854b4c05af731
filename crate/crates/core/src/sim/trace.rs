//! Audit trace and final-state dump.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::contractvm::Storage;
use crate::coord::CoordStatus;
use crate::txcore::{Address, ChainId, CrosschainTxId};

/// One line of the trace. `details` is a JSON object whose keys serialize in
/// sorted order, so the rendering of a record is stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: u64,
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<u32>,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx_id: Option<u64>,
    pub details: Value,
}

impl TraceRecord {
    pub fn detail_str(&self, key: &str) -> Option<&str> {
        self.details.get(key).and_then(Value::as_str)
    }

    pub fn detail_u64(&self, key: &str) -> Option<u64> {
        self.details.get(key).and_then(Value::as_u64)
    }

    pub fn detail_bool(&self, key: &str) -> Option<bool> {
        self.details.get(key).and_then(Value::as_bool)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Trace { records })
    }

    pub fn of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a TraceRecord> + 'a {
        self.records.iter().filter(move |r| r.kind == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractState {
    pub lockable: bool,
    pub storage: Storage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lock_owner: Option<CrosschainTxId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provisional: Option<Storage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reserved_by: Option<CrosschainTxId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordState {
    /// Status as stored by the contract.
    pub stored: CoordStatus,
    /// Status as resolved at the final block (time-out applied).
    pub resolved: CoordStatus,
    pub timeout_block: u64,
    pub originating_chain: ChainId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordinationState {
    pub block: u64,
    pub records: BTreeMap<CrosschainTxId, RecordState>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionSummary {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx_id: Option<CrosschainTxId>,
    pub status: CoordStatus,
    /// First error that drove the transaction to Ignore, or why it was rejected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalState {
    pub tick: u64,
    pub quiescent: bool,
    pub outside_assumptions: bool,
    pub coordination: CoordinationState,
    pub chains: BTreeMap<ChainId, BTreeMap<Address, ContractState>>,
    pub submissions: Vec<SubmissionSummary>,
}

impl FinalState {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("final state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn storage(&self, chain: ChainId, contract: Address) -> Option<&Storage> {
        self.chains.get(&chain)?.get(&contract).map(|c| &c.storage)
    }

    pub fn submission(&self, label: &str) -> Option<&SubmissionSummary> {
        self.submissions.iter().find(|s| s.label == label)
    }
}
