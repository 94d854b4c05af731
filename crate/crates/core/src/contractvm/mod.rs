//! Application contract runtime.
//!
//! Contracts are host-registered deterministic functions over a `u64 -> u64`
//! storage map. A lockable contract that has a crosschain transaction mined
//! against it holds the resulting writes in a provisional overlay until the
//! coordination outcome is known; committed storage only ever changes in
//! [`ContractInstance::unlock_commit`].

mod exec;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::txcore::{Address, CrosschainTxId};

pub use exec::{
    execute_trial, run_call, CallOutcome, CrosschainCall, CrosschainHandler, Env, ExecContext, ExecMode, TrialOutcome,
    TrialResult, ViewCache, MAX_CALL_DEPTH,
};

pub type Storage = BTreeMap<u64, u64>;

/// Signature of a contract function body.
pub type FunctionBody = fn(&mut Env<'_, '_>, &[u64]) -> Result<Option<u64>, Fault>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LockFault {
    Nonlockable,
    AlreadyLocked {
        owner: CrosschainTxId,
        requester: CrosschainTxId,
    },
}

impl fmt::Display for LockFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LockFault::Nonlockable => write!(f, "contract is nonlockable"),
            LockFault::AlreadyLocked { owner, requester } if owner == requester => {
                write!(f, "contract already locked by this transaction ({owner})")
            }
            LockFault::AlreadyLocked { owner, .. } => {
                write!(f, "contract already locked by transaction {owner}")
            }
        }
    }
}

/// Reasons a contract execution reverts.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fault {
    #[error("crosschain call {actual} does not match expected {expected:?}")]
    ParamMismatch { expected: Option<String>, actual: String },
    #[error("{remaining} subordinate(s) were never called")]
    UnconsumedSubordinate { remaining: usize },
    #[error("no cached result for view subordinate #{position}")]
    MissingViewResult { position: usize },
    #[error("contract fault: {reason}")]
    ContractFault { reason: String },
    #[error("lock fault on {address}: {fault}")]
    Lock { address: Address, fault: LockFault },
    #[error("no contract at {address}")]
    UnknownContract { address: Address },
    #[error("contract {address} has no function {function}")]
    UnknownFunction { address: Address, function: String },
    #[error("{function} takes {expected} argument(s), got {found}")]
    ArityMismatch {
        function: String,
        expected: usize,
        found: usize,
    },
    #[error("call depth exceeded")]
    CallDepthExceeded,
    #[error("a view attempted a crosschain transaction")]
    TransactionFromView,
    #[error("view {function} returned no value")]
    ViewReturnedNothing { function: String },
}

impl Fault {
    pub fn contract(reason: impl Into<String>) -> Self {
        Fault::ContractFault { reason: reason.into() }
    }

    /// Short machine-readable kind, used in traces.
    pub fn kind(&self) -> &'static str {
        match self {
            Fault::ParamMismatch { .. } => "ParamMismatch",
            Fault::UnconsumedSubordinate { .. } => "UnconsumedSubordinate",
            Fault::MissingViewResult { .. } => "MissingViewResult",
            Fault::ContractFault { .. } => "ContractFault",
            Fault::Lock {
                fault: LockFault::Nonlockable,
                ..
            } => "LockFault(Nonlockable)",
            Fault::Lock {
                fault: LockFault::AlreadyLocked { .. },
                ..
            } => "LockFault(AlreadyLocked)",
            Fault::UnknownContract { .. } => "UnknownContract",
            Fault::UnknownFunction { .. } => "UnknownFunction",
            Fault::ArityMismatch { .. } => "ArityMismatch",
            Fault::CallDepthExceeded => "CallDepthExceeded",
            Fault::TransactionFromView => "TransactionFromView",
            Fault::ViewReturnedNothing { .. } => "ViewReturnedNothing",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VmError {
    #[error("address {0} already has a contract")]
    AddressInUse(Address),
    #[error("contract {0} is not locked")]
    NotLocked(Address),
    #[error("no contract at {0}")]
    UnknownContract(Address),
    #[error(transparent)]
    Lock(#[from] LockFault),
}

impl std::error::Error for LockFault {}

#[derive(Clone, Copy)]
pub struct FunctionDef {
    pub arity: usize,
    pub body: FunctionBody,
}

impl fmt::Debug for FunctionDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FunctionDef(arity={})", self.arity)
    }
}

/// A named bundle of functions, shared between every deployment of it.
#[derive(Debug, Clone)]
pub struct ContractCode {
    pub name: String,
    functions: BTreeMap<String, FunctionDef>,
}

impl ContractCode {
    pub fn new(name: impl Into<String>) -> Self {
        ContractCode {
            name: name.into(),
            functions: BTreeMap::new(),
        }
    }

    pub fn with(mut self, function: &str, arity: usize, body: FunctionBody) -> Self {
        self.functions.insert(function.to_owned(), FunctionDef { arity, body });
        self
    }

    pub fn function(&self, name: &str) -> Option<&FunctionDef> {
        self.functions.get(name)
    }

    pub fn function_names(&self) -> impl Iterator<Item = &str> {
        self.functions.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone)]
pub struct ContractInstance {
    pub address: Address,
    pub lockable: bool,
    pub committed_storage: Storage,
    provisional_overlay: Option<Storage>,
    lock_owner: Option<CrosschainTxId>,
    pub code: Arc<ContractCode>,
}

impl ContractInstance {
    pub fn new(address: Address, lockable: bool, code: Arc<ContractCode>) -> Self {
        ContractInstance {
            address,
            lockable,
            committed_storage: Storage::new(),
            provisional_overlay: None,
            lock_owner: None,
            code,
        }
    }

    pub fn lock_owner(&self) -> Option<CrosschainTxId> {
        self.lock_owner
    }

    pub fn provisional_overlay(&self) -> Option<&Storage> {
        self.provisional_overlay.as_ref()
    }

    /// Committed value of `key` (zero when unset). Provisional writes are not visible.
    pub fn committed(&self, key: u64) -> u64 {
        self.committed_storage.get(&key).copied().unwrap_or(0)
    }

    /// Lock the contract for `tx_id` and hold `writes` provisionally.
    pub fn lock_and_stage(&mut self, writes: Storage, tx_id: CrosschainTxId) -> Result<(), LockFault> {
        check_lock(self, tx_id)?;
        self.provisional_overlay = Some(writes);
        self.lock_owner = Some(tx_id);
        Ok(())
    }

    /// Merge the provisional overlay into committed storage and unlock.
    pub fn unlock_commit(&mut self) -> Result<CrosschainTxId, VmError> {
        let owner = self.lock_owner.take().ok_or(VmError::NotLocked(self.address))?;
        let overlay = self.provisional_overlay.take().unwrap_or_default();
        self.committed_storage.extend(overlay);
        Ok(owner)
    }

    /// Drop the provisional overlay and unlock.
    pub fn unlock_discard(&mut self) -> Result<CrosschainTxId, VmError> {
        let owner = self.lock_owner.take().ok_or(VmError::NotLocked(self.address))?;
        self.provisional_overlay = None;
        Ok(owner)
    }
}

/// Passes iff the contract is lockable and currently unlocked. A lock held by
/// the requesting transaction itself still faults.
pub fn check_lock(c: &ContractInstance, tx_id: CrosschainTxId) -> Result<(), LockFault> {
    if !c.lockable {
        return Err(LockFault::Nonlockable);
    }
    match c.lock_owner {
        Some(owner) => Err(LockFault::AlreadyLocked {
            owner,
            requester: tx_id,
        }),
        None => Ok(()),
    }
}

/// All contracts deployed on one chain, plus reservations held by transactions
/// that passed trial execution but are not mined yet.
#[derive(Debug, Clone, Default)]
pub struct ContractSet {
    contracts: BTreeMap<Address, ContractInstance>,
    pending: BTreeMap<Address, CrosschainTxId>,
}

impl ContractSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn deploy(
        &mut self,
        address: Address,
        lockable: bool,
        code: Arc<ContractCode>,
    ) -> Result<&mut ContractInstance, VmError> {
        if self.contracts.contains_key(&address) {
            return Err(VmError::AddressInUse(address));
        }
        Ok(self
            .contracts
            .entry(address)
            .or_insert_with(|| ContractInstance::new(address, lockable, code)))
    }

    pub fn get(&self, address: Address) -> Option<&ContractInstance> {
        self.contracts.get(&address)
    }

    pub fn get_mut(&mut self, address: Address) -> Option<&mut ContractInstance> {
        self.contracts.get_mut(&address)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ContractInstance> {
        self.contracts.values()
    }

    /// Locked, or reserved by a transaction awaiting mining.
    pub fn is_locked(&self, address: Address) -> bool {
        self.pending.contains_key(&address) || self.contracts.get(&address).is_some_and(|c| c.lock_owner.is_some())
    }

    /// [`check_lock`] that also treats a pending reservation as a lock.
    pub fn check_lock_pending(&self, address: Address, tx_id: CrosschainTxId) -> Result<(), Fault> {
        let c = self.contracts.get(&address).ok_or(Fault::UnknownContract { address })?;
        check_lock(c, tx_id).map_err(|fault| Fault::Lock { address, fault })?;
        if let Some(&owner) = self.pending.get(&address) {
            return Err(Fault::Lock {
                address,
                fault: LockFault::AlreadyLocked {
                    owner,
                    requester: tx_id,
                },
            });
        }
        Ok(())
    }

    pub fn reserve(&mut self, address: Address, tx_id: CrosschainTxId) {
        self.pending.insert(address, tx_id);
    }

    /// Remove a reservation if `tx_id` holds it.
    pub fn release(&mut self, address: Address, tx_id: CrosschainTxId) {
        if self.pending.get(&address) == Some(&tx_id) {
            self.pending.remove(&address);
        }
    }

    pub fn reservation(&self, address: Address) -> Option<CrosschainTxId> {
        self.pending.get(&address).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noop(_: &mut Env<'_, '_>, _: &[u64]) -> Result<Option<u64>, Fault> {
        Ok(None)
    }

    fn code() -> Arc<ContractCode> {
        Arc::new(ContractCode::new("noop").with("f", 0, noop))
    }

    const A1: Address = Address::from_u64(0xA1);
    const T1: CrosschainTxId = CrosschainTxId(1);
    const T2: CrosschainTxId = CrosschainTxId(2);

    #[test]
    fn deploy_starts_unlocked_and_rejects_reuse() {
        let mut set = ContractSet::new();
        let c = set.deploy(A1, true, code()).unwrap();
        assert!(c.lock_owner().is_none());
        assert!(c.provisional_overlay().is_none());
        assert_eq!(set.deploy(A1, false, code()).unwrap_err(), VmError::AddressInUse(A1));
    }

    #[test]
    fn check_lock_cases() {
        let mut c = ContractInstance::new(A1, true, code());
        assert_eq!(check_lock(&c, T1), Ok(()));
        c.lock_and_stage(Storage::new(), T1).unwrap();
        assert_eq!(
            check_lock(&c, T1),
            Err(LockFault::AlreadyLocked {
                owner: T1,
                requester: T1
            })
        );
        assert_eq!(
            check_lock(&c, T2),
            Err(LockFault::AlreadyLocked {
                owner: T1,
                requester: T2
            })
        );
        let router = ContractInstance::new(A1, false, code());
        assert_eq!(check_lock(&router, T1), Err(LockFault::Nonlockable));
    }

    #[test]
    fn staging_is_isolated_until_commit() {
        let mut c = ContractInstance::new(A1, true, code());
        c.committed_storage.insert(1, 3);
        c.lock_and_stage(Storage::from([(1, 7), (2, 9)]), T1).unwrap();
        assert_eq!(c.committed(1), 3);
        assert_eq!(c.lock_owner(), Some(T1));
        assert!(c.lock_and_stage(Storage::new(), T2).is_err());
        assert_eq!(c.unlock_commit(), Ok(T1));
        assert_eq!(c.committed(1), 7);
        assert_eq!(c.committed(2), 9);
        assert!(c.lock_owner().is_none());
        assert!(c.provisional_overlay().is_none());
    }

    #[test]
    fn discard_leaves_storage() {
        let mut c = ContractInstance::new(A1, true, code());
        c.committed_storage.insert(1, 3);
        c.lock_and_stage(Storage::from([(1, 7)]), T1).unwrap();
        assert_eq!(c.unlock_discard(), Ok(T1));
        assert_eq!(c.committed_storage, Storage::from([(1, 3)]));
        assert_eq!(c.unlock_commit(), Err(VmError::NotLocked(A1)));
        assert_eq!(c.unlock_discard(), Err(VmError::NotLocked(A1)));
    }

    #[test]
    fn reservations_count_as_locks() {
        let mut set = ContractSet::new();
        set.deploy(A1, true, code()).unwrap();
        assert!(!set.is_locked(A1));
        set.reserve(A1, T1);
        assert!(set.is_locked(A1));
        assert!(matches!(
            set.check_lock_pending(A1, T2),
            Err(Fault::Lock {
                fault: LockFault::AlreadyLocked { owner: T1, .. },
                ..
            })
        ));
        set.release(A1, T2);
        assert!(set.is_locked(A1));
        set.release(A1, T1);
        assert!(set.check_lock_pending(A1, T2).is_ok());
    }
}
