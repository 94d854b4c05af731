//! Scenario configuration (JSON).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::fault::FaultSpec;
use crate::contractvm::Storage;
use crate::scenario::contracts;
use crate::txcore::{Address, ChainId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("invalid JSON: {0}")]
    Parse(String),
    #[error("chain {0} declared twice")]
    DuplicateChain(ChainId),
    #[error("chain {0} is not declared")]
    UnknownChain(ChainId),
    #[error("chain {chain}: threshold {m} of {n} validators is invalid")]
    BadThreshold { chain: ChainId, n: u32, m: u32 },
    #[error("coordination chain {0} may not also be an application chain")]
    CoordinationChainClash(ChainId),
    #[error("contract {address} on chain {chain} declared twice")]
    DuplicateContract { chain: ChainId, address: Address },
    #[error("contract {address} on chain {chain} is not declared")]
    UnknownContract { chain: ChainId, address: Address },
    #[error("no contract code named {0:?}")]
    UnknownCode(String),
    #[error("multichain node {0:?} is not declared")]
    UnknownOwner(String),
    #[error("multichain node {owner:?}: chain {chain} has no validator {index}")]
    BadMember { owner: String, chain: ChainId, index: u32 },
    #[error("fault site does not exist: {0}")]
    UnknownSite(String),
    #[error("{0}")]
    Invalid(String),
}

fn default_ticks_per_block() -> u64 {
    10
}
fn default_mining_delay() -> u64 {
    3
}
fn default_timer_jitter() -> u64 {
    20
}
fn default_max_ticks() -> u64 {
    5_000
}
fn default_latency() -> u64 {
    1
}

/// Timing parameters, all in simulation ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimParams {
    /// Ticks per coordination-chain block.
    #[serde(default = "default_ticks_per_block")]
    pub ticks_per_block: u64,
    /// Ticks from pool entry to mining.
    #[serde(default = "default_mining_delay")]
    pub mining_delay: u64,
    /// Upper bound of the random extra wait added to local timers.
    #[serde(default = "default_timer_jitter")]
    pub timer_jitter: u64,
    #[serde(default = "default_max_ticks")]
    pub max_ticks: u64,
    /// Base delivery delay for every message.
    #[serde(default = "default_latency")]
    pub message_latency: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            ticks_per_block: default_ticks_per_block(),
            mining_delay: default_mining_delay(),
            timer_jitter: default_timer_jitter(),
            max_ticks: default_max_ticks(),
            message_latency: default_latency(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordinationConfig {
    pub chain: ChainId,
    pub contract: Address,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub id: ChainId,
    pub validators: u32,
    pub threshold: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractConfig {
    pub chain: ChainId,
    pub address: Address,
    pub lockable: bool,
    /// Name of a body in the contract library.
    pub code: String,
    #[serde(default)]
    pub storage: Storage,
}

/// A logical grouping of one validator per chain, used to submit and relay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultichainNodeSpec {
    pub owner: String,
    /// Chain to 1-based validator index.
    pub members: BTreeMap<ChainId, u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageOverride {
    pub chain: ChainId,
    pub contract: Address,
    pub key: u64,
    pub value: u64,
}

/// Replace the arguments of the nested element at `path` after building.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgOverride {
    pub path: Vec<usize>,
    pub args: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionConfig {
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub at_tick: u64,
    /// Owner label of the multichain node the transaction is submitted to.
    pub via: String,
    pub sender: Address,
    pub chain: ChainId,
    pub contract: Address,
    pub function: String,
    #[serde(default)]
    pub args: Vec<u64>,
    /// Time-out, in coordination blocks after the block current at submission.
    pub timeout_blocks: u64,
    /// Storage the builder sees instead of the live value.
    #[serde(default)]
    pub snapshot_overrides: Vec<StorageOverride>,
    #[serde(default)]
    pub arg_overrides: Vec<ArgOverride>,
    /// Corrupt the account signature after building.
    #[serde(default)]
    pub tamper_signature: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRotation {
    pub chain: ChainId,
    pub at_tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub params: SimParams,
    pub coordination: CoordinationConfig,
    pub chains: Vec<ChainConfig>,
    pub contracts: Vec<ContractConfig>,
    pub multichain_nodes: Vec<MultichainNodeSpec>,
    pub submissions: Vec<SubmissionConfig>,
    #[serde(default)]
    pub key_rotations: Vec<KeyRotation>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn chain(&self, id: ChainId) -> Option<&ChainConfig> {
        self.chains.iter().find(|c| c.id == id)
    }

    pub fn owner(&self, label: &str) -> Option<&MultichainNodeSpec> {
        self.multichain_nodes.iter().find(|m| m.owner == label)
    }

    fn contract(&self, chain: ChainId, address: Address) -> Option<&ContractConfig> {
        self.contracts.iter().find(|c| c.chain == chain && c.address == address)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.params;
        if p.ticks_per_block == 0 {
            return Err(ConfigError::Invalid("ticks_per_block must be positive".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.chains {
            if !seen.insert(c.id) {
                return Err(ConfigError::DuplicateChain(c.id));
            }
            if c.threshold == 0 || c.threshold > c.validators {
                return Err(ConfigError::BadThreshold {
                    chain: c.id,
                    n: c.validators,
                    m: c.threshold,
                });
            }
        }
        if seen.contains(&self.coordination.chain) {
            return Err(ConfigError::CoordinationChainClash(self.coordination.chain));
        }
        let known = |id: ChainId| {
            if seen.contains(&id) {
                Ok(())
            } else {
                Err(ConfigError::UnknownChain(id))
            }
        };
        let mut addrs = BTreeSet::new();
        for c in &self.contracts {
            known(c.chain)?;
            if !addrs.insert((c.chain, c.address)) {
                return Err(ConfigError::DuplicateContract {
                    chain: c.chain,
                    address: c.address,
                });
            }
            if contracts::lookup(&c.code).is_none() {
                return Err(ConfigError::UnknownCode(c.code.clone()));
            }
        }
        for m in &self.multichain_nodes {
            for (&chain, &index) in &m.members {
                let c = self.chain(chain).ok_or(ConfigError::UnknownChain(chain))?;
                if index == 0 || index > c.validators {
                    return Err(ConfigError::BadMember {
                        owner: m.owner.clone(),
                        chain,
                        index,
                    });
                }
            }
        }
        for s in &self.submissions {
            self.owner(&s.via)
                .ok_or_else(|| ConfigError::UnknownOwner(s.via.clone()))?;
            known(s.chain)?;
            self.contract(s.chain, s.contract).ok_or(ConfigError::UnknownContract {
                chain: s.chain,
                address: s.contract,
            })?;
            for o in &s.snapshot_overrides {
                self.contract(o.chain, o.contract).ok_or(ConfigError::UnknownContract {
                    chain: o.chain,
                    address: o.contract,
                })?;
            }
        }
        for r in &self.key_rotations {
            known(r.chain)?;
        }
        for f in &self.faults {
            f.check_site(self)?;
        }
        Ok(())
    }
}
