//! Coordination blockchain: block clock, per-transaction coordination records
//! and the registry of blockchain public keys.
//!
//! A record moves `Started -> Committed` or `Started -> Ignored` and never
//! leaves a terminal state. A `Started` record whose time-out block has
//! passed *reads* as `Ignored`; the stored value is left alone, so the
//! time-out needs no active party on the coordination chain.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tsig::{self, GroupScalar, ThresholdConfig, ThresholdSignature};
use crate::txcore::{Address, ChainId, CrosschainTxId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CoordStatus {
    NotStarted,
    Started,
    Committed,
    Ignored,
}

impl CoordStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, CoordStatus::Committed | CoordStatus::Ignored)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CoordinationRecord {
    pub tx_id: CrosschainTxId,
    pub status: CoordStatus,
    pub timeout_block: u64,
    pub originating_chain: ChainId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KeyRegistryEntry {
    pub chain: ChainId,
    pub version: u64,
    pub public_key: GroupScalar,
    pub threshold_cfg: ThresholdConfig,
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind")]
pub enum CoordError {
    #[error("key version {given} for chain {chain} is not newer than {latest}")]
    StaleVersion { chain: ChainId, latest: u64, given: u64 },
    #[error("threshold signature does not verify")]
    BadSignature,
    #[error("crosschain transaction {0} already started")]
    DuplicateTxId(CrosschainTxId),
    #[error("time-out block {timeout_block} is not after current block {current_block}")]
    TimeoutInPast { timeout_block: u64, current_block: u64 },
    #[error("crosschain transaction {0} was never started")]
    UnknownTx(CrosschainTxId),
    #[error("record is {0:?}, not Started")]
    WrongState(CoordStatus),
    #[error("current block {current_block} is past time-out block {timeout_block}")]
    PastTimeout { timeout_block: u64, current_block: u64 },
}

impl CoordError {
    pub fn kind(&self) -> &'static str {
        match self {
            CoordError::StaleVersion { .. } => "StaleVersion",
            CoordError::BadSignature => "BadSignature",
            CoordError::DuplicateTxId(_) => "DuplicateTxId",
            CoordError::TimeoutInPast { .. } => "TimeoutInPast",
            CoordError::UnknownTx(_) => "UnknownTx",
            CoordError::WrongState(_) => "WrongState",
            CoordError::PastTimeout { .. } => "PastTimeout",
        }
    }
}

/// Signed payload of a Start message: `"START" || tx_id || timeout_block || originating_chain`.
pub fn start_message(tx_id: CrosschainTxId, timeout_block: u64, originating_chain: ChainId) -> Vec<u8> {
    let mut m = b"START".to_vec();
    m.extend_from_slice(&tx_id.0.to_be_bytes());
    m.extend_from_slice(&timeout_block.to_be_bytes());
    m.extend_from_slice(&originating_chain.value().to_be_bytes());
    m
}

pub fn commit_message(tx_id: CrosschainTxId) -> Vec<u8> {
    let mut m = b"COMMIT".to_vec();
    m.extend_from_slice(&tx_id.0.to_be_bytes());
    m
}

pub fn ignore_message(tx_id: CrosschainTxId) -> Vec<u8> {
    let mut m = b"IGNORE".to_vec();
    m.extend_from_slice(&tx_id.0.to_be_bytes());
    m
}

/// Maps simulation ticks to coordination-chain block numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CoordClock {
    current_block: u64,
    ticks_per_block: u64,
    carry: u64,
}

impl CoordClock {
    pub fn new(ticks_per_block: u64) -> Self {
        assert!(ticks_per_block > 0, "ticks per block must be positive");
        CoordClock {
            current_block: 0,
            ticks_per_block,
            carry: 0,
        }
    }

    pub fn current_block(&self) -> u64 {
        self.current_block
    }

    pub fn ticks_per_block(&self) -> u64 {
        self.ticks_per_block
    }

    pub fn carry(&self) -> u64 {
        self.carry
    }

    pub fn advance(&mut self, ticks: u64) -> u64 {
        let total = self.carry + ticks;
        self.current_block += total / self.ticks_per_block;
        self.carry = total % self.ticks_per_block;
        self.current_block
    }

    /// First tick at which the block number exceeds `timeout_block`.
    pub fn timeout_tick(&self, timeout_block: u64) -> u64 {
        (timeout_block + 1) * self.ticks_per_block
    }
}

#[derive(Debug, Clone, Default)]
pub struct KeyRegistry {
    entries: BTreeMap<ChainId, Vec<KeyRegistryEntry>>,
}

impl KeyRegistry {
    pub fn register(&mut self, entry: KeyRegistryEntry) -> Result<(), CoordError> {
        let versions = self.entries.entry(entry.chain).or_default();
        if let Some(last) = versions.last() {
            if entry.version <= last.version {
                return Err(CoordError::StaleVersion {
                    chain: entry.chain,
                    latest: last.version,
                    given: entry.version,
                });
            }
        }
        versions.push(entry);
        Ok(())
    }

    pub fn latest(&self, chain: ChainId) -> Option<&KeyRegistryEntry> {
        self.entries.get(&chain).and_then(|v| v.last())
    }

    pub fn get(&self, chain: ChainId, version: u64) -> Option<&KeyRegistryEntry> {
        self.entries
            .get(&chain)
            .and_then(|v| v.iter().find(|e| e.version == version))
    }

    fn verify_latest(&self, chain: ChainId, msg: &[u8], sig: &ThresholdSignature) -> Result<(), CoordError> {
        let entry = self.latest(chain).ok_or(CoordError::BadSignature)?;
        if tsig::verify(entry.public_key, msg, sig) {
            Ok(())
        } else {
            Err(CoordError::BadSignature)
        }
    }
}

/// The crosschain coordination contract together with its chain's clock.
#[derive(Debug, Clone)]
pub struct CoordinationContract {
    pub chain: ChainId,
    pub address: Address,
    clock: CoordClock,
    registry: KeyRegistry,
    records: BTreeMap<CrosschainTxId, CoordinationRecord>,
}

impl CoordinationContract {
    pub fn new(chain: ChainId, address: Address, ticks_per_block: u64) -> Self {
        CoordinationContract {
            chain,
            address,
            clock: CoordClock::new(ticks_per_block),
            registry: KeyRegistry::default(),
            records: BTreeMap::new(),
        }
    }

    pub fn clock(&self) -> &CoordClock {
        &self.clock
    }

    pub fn current_block(&self) -> u64 {
        self.clock.current_block
    }

    pub fn advance_clock(&mut self, ticks: u64) -> u64 {
        self.clock.advance(ticks)
    }

    pub fn registry(&self) -> &KeyRegistry {
        &self.registry
    }

    pub fn register_key(&mut self, entry: KeyRegistryEntry) -> Result<(), CoordError> {
        self.registry.register(entry)
    }

    pub fn record(&self, tx_id: CrosschainTxId) -> Option<&CoordinationRecord> {
        self.records.get(&tx_id)
    }

    pub fn records(&self) -> impl Iterator<Item = &CoordinationRecord> {
        self.records.values()
    }

    pub fn submit_start(
        &mut self,
        tx_id: CrosschainTxId,
        originating_chain: ChainId,
        timeout_block: u64,
        sig: &ThresholdSignature,
    ) -> Result<(), CoordError> {
        let msg = start_message(tx_id, timeout_block, originating_chain);
        self.registry.verify_latest(originating_chain, &msg, sig)?;
        if self.records.contains_key(&tx_id) {
            return Err(CoordError::DuplicateTxId(tx_id));
        }
        let current_block = self.clock.current_block;
        if timeout_block <= current_block {
            return Err(CoordError::TimeoutInPast {
                timeout_block,
                current_block,
            });
        }
        self.records.insert(
            tx_id,
            CoordinationRecord {
                tx_id,
                status: CoordStatus::Started,
                timeout_block,
                originating_chain,
            },
        );
        Ok(())
    }

    pub fn submit_commit(&mut self, tx_id: CrosschainTxId, sig: &ThresholdSignature) -> Result<(), CoordError> {
        self.finish(tx_id, sig, CoordStatus::Committed)
    }

    pub fn submit_ignore(&mut self, tx_id: CrosschainTxId, sig: &ThresholdSignature) -> Result<(), CoordError> {
        self.finish(tx_id, sig, CoordStatus::Ignored)
    }

    fn finish(&mut self, tx_id: CrosschainTxId, sig: &ThresholdSignature, to: CoordStatus) -> Result<(), CoordError> {
        let current_block = self.clock.current_block;
        let record = self.records.get_mut(&tx_id).ok_or(CoordError::UnknownTx(tx_id))?;
        let msg = match to {
            CoordStatus::Committed => commit_message(tx_id),
            _ => ignore_message(tx_id),
        };
        // Only the originating chain may finish its own transaction.
        self.registry.verify_latest(record.originating_chain, &msg, sig)?;
        if record.status != CoordStatus::Started {
            return Err(CoordError::WrongState(record.status));
        }
        if current_block > record.timeout_block {
            return Err(CoordError::PastTimeout {
                timeout_block: record.timeout_block,
                current_block,
            });
        }
        record.status = to;
        Ok(())
    }

    /// Resolved status as seen at `at_block`.
    pub fn status(&self, tx_id: CrosschainTxId, at_block: u64) -> CoordStatus {
        match self.records.get(&tx_id) {
            None => CoordStatus::NotStarted,
            Some(r) if r.status == CoordStatus::Started && at_block > r.timeout_block => CoordStatus::Ignored,
            Some(r) => r.status,
        }
    }

    /// Status at the current block.
    pub fn current_status(&self, tx_id: CrosschainTxId) -> CoordStatus {
        self.status(tx_id, self.clock.current_block)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tsig::{combine, dealer_keygen, sign_share};

    const ORIG: ChainId = ChainId::new(1);
    const TX: CrosschainTxId = CrosschainTxId(77);

    struct Fixture {
        coord: CoordinationContract,
        keys: tsig::KeygenOutput,
        cfg: ThresholdConfig,
    }

    fn fixture() -> Fixture {
        let cfg = ThresholdConfig::new(4, 3).unwrap();
        let keys = dealer_keygen(cfg, 11).unwrap();
        let mut coord = CoordinationContract::new(ChainId::new(100), Address::from_u64(0xC0), 10);
        coord
            .register_key(KeyRegistryEntry {
                chain: ORIG,
                version: 1,
                public_key: keys.public_key,
                threshold_cfg: cfg,
            })
            .unwrap();
        Fixture { coord, keys, cfg }
    }

    impl Fixture {
        fn sign(&self, msg: &[u8], count: usize) -> ThresholdSignature {
            let shares: Vec<_> = self
                .keys
                .shares
                .iter()
                .take(count)
                .map(|s| sign_share(s, msg))
                .collect();
            let cfg = ThresholdConfig::new(4, count as u32).unwrap();
            combine(&shares, cfg).unwrap()
        }
        fn start(&mut self, timeout: u64) -> Result<(), CoordError> {
            let sig = self.sign(&start_message(TX, timeout, ORIG), self.cfg.m() as usize);
            self.coord.submit_start(TX, ORIG, timeout, &sig)
        }
    }

    #[test]
    fn registry_versions() {
        let mut f = fixture();
        let e = *f.coord.registry().latest(ORIG).unwrap();
        assert_eq!(
            f.coord.register_key(e),
            Err(CoordError::StaleVersion {
                chain: ORIG,
                latest: 1,
                given: 1
            })
        );
        f.coord.register_key(KeyRegistryEntry { version: 2, ..e }).unwrap();
        assert_eq!(f.coord.registry().latest(ORIG).unwrap().version, 2);
        assert_eq!(f.coord.registry().get(ORIG, 1).unwrap().version, 1);
    }

    #[test]
    fn start_happy_and_rejections() {
        let mut f = fixture();
        f.coord.advance_clock(100);
        assert_eq!(f.coord.current_block(), 10);
        assert_eq!(f.start(50), Ok(()));
        assert_eq!(f.coord.current_status(TX), CoordStatus::Started);
        assert_eq!(f.start(50), Err(CoordError::DuplicateTxId(TX)));

        let mut g = fixture();
        // m-1 shares interpolate to something other than the real signature
        let weak = g.sign(&start_message(TX, 50, ORIG), 2);
        assert_eq!(g.coord.submit_start(TX, ORIG, 50, &weak), Err(CoordError::BadSignature));
        g.coord.advance_clock(500);
        assert!(matches!(g.start(50), Err(CoordError::TimeoutInPast { .. })));
        assert_eq!(g.coord.current_status(TX), CoordStatus::NotStarted);
    }

    #[test]
    fn commit_before_timeout() {
        let mut f = fixture();
        f.start(50).unwrap();
        let sig = f.sign(&commit_message(TX), 3);
        assert_eq!(f.coord.submit_commit(TX, &sig), Ok(()));
        assert_eq!(f.coord.status(TX, 1_000), CoordStatus::Committed);
        let ig = f.sign(&ignore_message(TX), 3);
        assert_eq!(
            f.coord.submit_ignore(TX, &ig),
            Err(CoordError::WrongState(CoordStatus::Committed))
        );
    }

    #[test]
    fn commit_after_timeout_is_rejected() {
        let mut f = fixture();
        f.start(50).unwrap();
        f.coord.advance_clock(510);
        assert_eq!(f.coord.current_block(), 51);
        let sig = f.sign(&commit_message(TX), 3);
        assert_eq!(
            f.coord.submit_commit(TX, &sig),
            Err(CoordError::PastTimeout {
                timeout_block: 50,
                current_block: 51
            })
        );
        assert_eq!(f.coord.current_status(TX), CoordStatus::Ignored);
        assert_eq!(f.coord.status(TX, 60), CoordStatus::Ignored);
        assert_eq!(f.coord.status(TX, 50), CoordStatus::Started);
    }

    #[test]
    fn ignore_signature_cannot_commit() {
        let mut f = fixture();
        f.start(50).unwrap();
        let ig = f.sign(&ignore_message(TX), 3);
        assert_eq!(f.coord.submit_commit(TX, &ig), Err(CoordError::BadSignature));
        assert_eq!(f.coord.submit_ignore(TX, &ig), Ok(()));
        assert_eq!(f.coord.status(TX, 0), CoordStatus::Ignored);
    }

    #[test]
    fn unknown_tx() {
        let mut f = fixture();
        let sig = f.sign(&commit_message(TX), 3);
        assert_eq!(f.coord.submit_commit(TX, &sig), Err(CoordError::UnknownTx(TX)));
        assert_eq!(f.coord.status(TX, 0), CoordStatus::NotStarted);
    }

    #[test]
    fn clock_carry() {
        let mut c = CoordClock::new(10);
        assert_eq!(c.advance(25), 2);
        assert_eq!(c.carry(), 5);
        assert_eq!(c.advance(0), 2);
        let mut c = CoordClock::new(10);
        c.advance(5);
        assert_eq!(c.advance(5), 1);
        assert_eq!(c.timeout_tick(5), 60);
    }
}
