//! Nested crosschain transaction model.
//!
//! A crosschain transaction is a tree: the originating transaction at the
//! root, with subordinate transactions and views nested beneath the call that
//! triggers them. Every element carries the same coordination parameters
//! (coordination chain, coordination contract, time-out block, transaction id
//! and originating chain), which [`validate_nesting`] checks along with the
//! from-chain / from-address linkage between parent and child.

mod builder;
mod encoding;
mod validate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use builder::{build_crosschain_tx, ChainSnapshot, CoordinationParams, EoaAccount, Snapshot};
pub use encoding::{decode, encode};
pub use validate::{validate_nesting, SharedField, Violation};

use crate::contractvm::Fault;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TxError {
    #[error("malformed encoding: {0}")]
    MalformedEncoding(String),
    #[error("construction pass faulted: {0}")]
    ConstructionFault(Fault),
    #[error("snapshot has no chain {0}")]
    UnknownChain(ChainId),
}

/// Positive blockchain identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChainId(u64);

impl ChainId {
    /// Panics on zero; use [`ChainId::try_new`] for untrusted input.
    pub const fn new(value: u64) -> Self {
        assert!(value > 0, "chain id must be positive");
        ChainId(value)
    }

    pub fn try_new(value: u64) -> Option<Self> {
        (value > 0).then_some(ChainId(value))
    }

    pub fn value(self) -> u64 {
        self.0
    }
}

impl fmt::Display for ChainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for ChainId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(self.0)
    }
}

impl<'de> Deserialize<'de> for ChainId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = u64::deserialize(d)?;
        ChainId::try_new(v).ok_or_else(|| serde::de::Error::custom("chain id must be positive"))
    }
}

/// 8-byte account or contract address.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address(pub [u8; 8]);

impl Address {
    pub const fn from_u64(v: u64) -> Self {
        Address(v.to_be_bytes())
    }

    pub fn to_u64(self) -> u64 {
        u64::from_be_bytes(self.0)
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({self})")
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:016x}", self.to_u64())
    }
}

impl FromStr for Address {
    type Err = String;

    /// Accepts `0x` followed by 1 to 16 hex digits.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let hex = s
            .strip_prefix("0x")
            .ok_or_else(|| format!("address {s:?} must start with 0x"))?;
        if hex.is_empty() || hex.len() > 16 {
            return Err(format!("address {s:?} must have 1..=16 hex digits"));
        }
        u64::from_str_radix(hex, 16)
            .map(Address::from_u64)
            .map_err(|e| format!("address {s:?}: {e}"))
    }
}

impl Serialize for Address {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CrosschainTxId(pub u64);

impl fmt::Display for CrosschainTxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CallPayload {
    pub function_name: String,
    pub args: Vec<u64>,
}

impl CallPayload {
    pub fn new(function_name: impl Into<String>, args: impl Into<Vec<u64>>) -> Self {
        CallPayload {
            function_name: function_name.into(),
            args: args.into(),
        }
    }
}

impl fmt::Display for CallPayload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.function_name)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxType {
    Originating,
    Subordinate,
    View,
    Signalling,
    SingleChain,
}

impl TxType {
    pub(crate) fn tag(self) -> u64 {
        match self {
            TxType::Originating => 0,
            TxType::Subordinate => 1,
            TxType::View => 2,
            TxType::Signalling => 3,
            TxType::SingleChain => 4,
        }
    }

    pub(crate) fn from_tag(tag: u64) -> Option<Self> {
        Some(match tag {
            0 => TxType::Originating,
            1 => TxType::Subordinate,
            2 => TxType::View,
            3 => TxType::Signalling,
            4 => TxType::SingleChain,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            TxType::Originating => "Originating",
            TxType::Subordinate => "Subordinate",
            TxType::View => "View",
            TxType::Signalling => "Signalling",
            TxType::SingleChain => "SingleChain",
        }
    }
}

/// One element of a nested crosschain transaction. Field order here is the
/// canonical encoding order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrosschainTransaction {
    pub tx_type: TxType,
    pub nonce: u64,
    pub gas_price: u64,
    pub gas_limit: u64,
    pub to: Address,
    pub value: u64,
    pub data: CallPayload,
    pub chain_id: ChainId,
    pub sender: Address,
    pub coordination_chain: ChainId,
    pub coordination_contract: Address,
    pub timeout_block: u64,
    pub crosschain_tx_id: CrosschainTxId,
    pub originating_chain: ChainId,
    pub from_chain: ChainId,
    pub from_address: Address,
    pub subordinates: Vec<CrosschainTransaction>,
}

impl CrosschainTransaction {
    /// Depth-first pre-order walk yielding `(path, element)`; the root has an empty path.
    pub fn walk(&self) -> Vec<(Vec<usize>, &CrosschainTransaction)> {
        let mut out = Vec::new();
        fn go<'a>(
            tx: &'a CrosschainTransaction,
            path: &mut Vec<usize>,
            out: &mut Vec<(Vec<usize>, &'a CrosschainTransaction)>,
        ) {
            out.push((path.clone(), tx));
            for (i, s) in tx.subordinates.iter().enumerate() {
                path.push(i);
                go(s, path, out);
                path.pop();
            }
        }
        go(self, &mut Vec::new(), &mut out);
        out
    }

    pub fn at_path(&self, path: &[usize]) -> Option<&CrosschainTransaction> {
        path.iter().try_fold(self, |tx, &i| tx.subordinates.get(i))
    }

    pub fn at_path_mut(&mut self, path: &[usize]) -> Option<&mut CrosschainTransaction> {
        path.iter().try_fold(self, |tx, &i| tx.subordinates.get_mut(i))
    }

    /// Every chain that hosts an element of this nest, in first-seen order.
    pub fn chains(&self) -> Vec<ChainId> {
        let mut out = Vec::new();
        for (_, tx) in self.walk() {
            if !out.contains(&tx.chain_id) {
                out.push(tx.chain_id);
            }
        }
        out
    }

    /// JSON rendering for traces: field names as declared, integers as decimal strings.
    pub fn debug_json(&self) -> Value {
        json!({
            "tx_type": self.tx_type.name(),
            "nonce": self.nonce.to_string(),
            "gas_price": self.gas_price.to_string(),
            "gas_limit": self.gas_limit.to_string(),
            "to": self.to.to_string(),
            "value": self.value.to_string(),
            "data": {
                "function_name": self.data.function_name,
                "args": self.data.args.iter().map(|a| a.to_string()).collect::<Vec<_>>(),
            },
            "chain_id": self.chain_id.to_string(),
            "sender": self.sender.to_string(),
            "coordination_chain": self.coordination_chain.to_string(),
            "coordination_contract": self.coordination_contract.to_string(),
            "timeout_block": self.timeout_block.to_string(),
            "crosschain_tx_id": self.crosschain_tx_id.to_string(),
            "originating_chain": self.originating_chain.to_string(),
            "from_chain": self.from_chain.to_string(),
            "from_address": self.from_address.to_string(),
            "subordinates": self.subordinates.iter().map(|s| s.debug_json()).collect::<Vec<_>>(),
        })
    }
}

/// Secret key of an externally owned account. Signatures are keyed hashes.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct EoaKey(pub [u8; 32]);

impl fmt::Debug for EoaKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("EoaKey(..)")
    }
}

impl EoaKey {
    /// Deterministic key for an account under a scenario seed.
    pub fn derive(address: Address, seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"EOA-KEY");
        h.update(address.0);
        h.update(seed.to_be_bytes());
        EoaKey(h.finalize().into())
    }

    pub fn sign(&self, body: &CrosschainTransaction) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.0);
        h.update(encode(body));
        h.finalize().into()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedEnvelope {
    pub body: CrosschainTransaction,
    pub eoa_signature: [u8; 32],
}

impl SignedEnvelope {
    pub fn sign(body: CrosschainTransaction, key: &EoaKey) -> Self {
        let eoa_signature = key.sign(&body);
        SignedEnvelope { body, eoa_signature }
    }

    pub fn verify(&self, key: &EoaKey) -> bool {
        key.sign(&self.body) == self.eoa_signature
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::leaf;
    use super::*;

    #[test]
    fn address_parse_and_display() {
        let a: Address = "0x1f".parse().unwrap();
        assert_eq!(a, Address::from_u64(0x1f));
        assert_eq!(a.to_string(), "0x000000000000001f");
        assert!("1f".parse::<Address>().is_err());
        assert!("0x".parse::<Address>().is_err());
        assert!("0x00000000000000001".parse::<Address>().is_err());
    }

    #[test]
    fn chain_id_rejects_zero() {
        assert!(ChainId::try_new(0).is_none());
        assert!(serde_json::from_str::<ChainId>("0").is_err());
        assert_eq!(serde_json::from_str::<ChainId>("3").unwrap(), ChainId::new(3));
    }

    #[test]
    fn envelope_signature_binds_body() {
        let key = EoaKey::derive(Address::from_u64(0xEE), 1);
        let mut env = SignedEnvelope::sign(leaf(TxType::Originating, 1, 5, 1, 0xEE), &key);
        assert!(env.verify(&key));
        assert!(!env.verify(&EoaKey::derive(Address::from_u64(0xEE), 2)));
        env.body.nonce += 1;
        assert!(!env.verify(&key));
    }

    #[test]
    fn debug_json_uses_decimal_strings() {
        let v = leaf(TxType::View, 3, 5, 1, 9).debug_json();
        assert_eq!(v["timeout_block"], "50");
        assert_eq!(v["tx_type"], "View");
        assert_eq!(v["data"]["args"][0], "1");
        assert_eq!(v["to"], "0x0000000000000005");
    }

    #[test]
    fn walk_is_depth_first() {
        let mut root = leaf(TxType::Originating, 1, 1, 1, 0xEE);
        let mut b = leaf(TxType::Subordinate, 2, 2, 1, 1);
        b.subordinates.push(leaf(TxType::View, 3, 3, 2, 2));
        root.subordinates.push(b);
        root.subordinates.push(leaf(TxType::Subordinate, 4, 4, 1, 1));
        let paths: Vec<Vec<usize>> = root.walk().into_iter().map(|(p, _)| p).collect();
        assert_eq!(paths, vec![vec![], vec![0], vec![0, 0], vec![1]]);
        assert_eq!(root.at_path(&[0, 0]).unwrap().chain_id, ChainId::new(3));
        assert_eq!(
            root.chains(),
            vec![ChainId::new(1), ChainId::new(2), ChainId::new(3), ChainId::new(4)]
        );
    }
}
