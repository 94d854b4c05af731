use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{ContractSet, Fault, Storage};
use crate::txcore::{Address, CallPayload, ChainId, CrosschainTransaction, TxType};

/// Local (same-chain) call nesting limit.
pub const MAX_CALL_DEPTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    Construction,
    Trial,
}

/// What a contract can see about the transaction it runs under. The three
/// `from_*`/`originating_*` fields are what the crosschain precompile exposes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecContext {
    pub msg_sender: Address,
    pub tx_origin: Address,
    pub from_address: Address,
    pub from_chain: ChainId,
    pub originating_chain: ChainId,
    pub this_chain: ChainId,
    pub mode: ExecMode,
}

impl ExecContext {
    /// Context for executing `tx` as a separately signed transaction.
    pub fn for_transaction(tx: &CrosschainTransaction, mode: ExecMode) -> Self {
        ExecContext {
            msg_sender: tx.sender,
            tx_origin: tx.sender,
            from_address: tx.from_address,
            from_chain: tx.from_chain,
            originating_chain: tx.originating_chain,
            this_chain: tx.chain_id,
            mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrosschainCall {
    pub chain: ChainId,
    pub contract: Address,
    pub payload: CallPayload,
}

impl CrosschainCall {
    fn describe(&self) -> String {
        format!("{}@{}:{}", self.payload, self.chain, self.contract)
    }

    fn matches(&self, tx: &CrosschainTransaction) -> bool {
        self.chain == tx.chain_id && self.contract == tx.to && self.payload == tx.data
    }
}

fn describe_tx(tx: &CrosschainTransaction) -> String {
    format!("{}@{}:{}", tx.data, tx.chain_id, tx.to)
}

/// Intercepts crosschain calls made by contract code.
pub trait CrosschainHandler {
    fn transaction(&mut self, call: &CrosschainCall) -> Result<(), Fault>;
    fn view(&mut self, call: &CrosschainCall) -> Result<u64, Fault>;
}

struct Execution<'a> {
    contracts: &'a ContractSet,
    handler: &'a mut dyn CrosschainHandler,
    ctx: &'a ExecContext,
    read_only: bool,
    writes: BTreeMap<Address, Storage>,
    reads: BTreeSet<(Address, u64)>,
    depth: usize,
}

/// Handle through which a function body touches storage and the outside world.
pub struct Env<'x, 'a> {
    exec: &'x mut Execution<'a>,
    this: Address,
    msg_sender: Address,
}

impl Env<'_, '_> {
    pub fn this_address(&self) -> Address {
        self.this
    }

    pub fn this_chain(&self) -> ChainId {
        self.exec.ctx.this_chain
    }

    /// Transaction context as seen from this frame (`msg_sender` is the caller).
    pub fn context(&self) -> ExecContext {
        ExecContext {
            msg_sender: self.msg_sender,
            ..self.exec.ctx.clone()
        }
    }

    pub fn load(&mut self, key: u64) -> u64 {
        self.exec.reads.insert((self.this, key));
        if let Some(v) = self.exec.writes.get(&self.this).and_then(|w| w.get(&key)) {
            return *v;
        }
        self.exec
            .contracts
            .get(self.this)
            .map(|c| c.committed(key))
            .unwrap_or(0)
    }

    pub fn store(&mut self, key: u64, value: u64) {
        self.exec.writes.entry(self.this).or_default().insert(key, value);
    }

    /// Whether `address` on this chain is locked or reserved by an in-flight transaction.
    pub fn is_locked(&self, address: Address) -> bool {
        self.exec.contracts.is_locked(address)
    }

    pub fn require(&self, cond: bool, reason: &str) -> Result<(), Fault> {
        if cond {
            Ok(())
        } else {
            Err(Fault::contract(reason))
        }
    }

    /// Ordinary call to another contract on the same chain.
    pub fn call_local(&mut self, address: Address, function: &str, args: &[u64]) -> Result<Option<u64>, Fault> {
        let payload = CallPayload::new(function, args.to_vec());
        invoke(self.exec, address, &payload, self.this)
    }

    pub fn crosschain_transaction(
        &mut self,
        chain: ChainId,
        contract: Address,
        function: &str,
        args: &[u64],
    ) -> Result<(), Fault> {
        if self.exec.read_only {
            return Err(Fault::TransactionFromView);
        }
        let call = CrosschainCall {
            chain,
            contract,
            payload: CallPayload::new(function, args.to_vec()),
        };
        self.exec.handler.transaction(&call)
    }

    pub fn crosschain_view(
        &mut self,
        chain: ChainId,
        contract: Address,
        function: &str,
        args: &[u64],
    ) -> Result<u64, Fault> {
        let call = CrosschainCall {
            chain,
            contract,
            payload: CallPayload::new(function, args.to_vec()),
        };
        self.exec.handler.view(&call)
    }
}

fn invoke(
    exec: &mut Execution<'_>,
    address: Address,
    payload: &CallPayload,
    msg_sender: Address,
) -> Result<Option<u64>, Fault> {
    if exec.depth >= MAX_CALL_DEPTH {
        return Err(Fault::CallDepthExceeded);
    }
    let contract = exec.contracts.get(address).ok_or(Fault::UnknownContract { address })?;
    let def = *contract
        .code
        .function(&payload.function_name)
        .ok_or_else(|| Fault::UnknownFunction {
            address,
            function: payload.function_name.clone(),
        })?;
    if def.arity != payload.args.len() {
        return Err(Fault::ArityMismatch {
            function: payload.function_name.clone(),
            expected: def.arity,
            found: payload.args.len(),
        });
    }
    exec.depth += 1;
    let mut env = Env {
        exec: &mut *exec,
        this: address,
        msg_sender,
    };
    let result = (def.body)(&mut env, &payload.args);
    exec.depth -= 1;
    result
}

#[derive(Debug, Clone)]
pub struct CallOutcome {
    pub result: Result<Option<u64>, Fault>,
    pub writes: BTreeMap<Address, Storage>,
    pub reads: BTreeSet<(Address, u64)>,
}

/// Execute one call against committed state, routing crosschain calls to `handler`.
pub fn run_call(
    contracts: &ContractSet,
    target: Address,
    call: &CallPayload,
    ctx: &ExecContext,
    read_only: bool,
    handler: &mut dyn CrosschainHandler,
) -> CallOutcome {
    let mut exec = Execution {
        contracts,
        handler,
        ctx,
        read_only,
        writes: BTreeMap::new(),
        reads: BTreeSet::new(),
        depth: 0,
    };
    let result = invoke(&mut exec, target, call, ctx.msg_sender);
    CallOutcome {
        result,
        writes: exec.writes,
        reads: exec.reads,
    }
}

/// Signed results of subordinate views, keyed by position in the subordinate list.
pub type ViewCache = BTreeMap<usize, u64>;

/// Checks each crosschain call against the signed subordinate list, in order.
struct SubordinateMatcher<'s> {
    subordinates: &'s [CrosschainTransaction],
    views: &'s ViewCache,
    next_tx: usize,
    next_view: usize,
    consumed: usize,
}

impl SubordinateMatcher<'_> {
    fn next_of(&self, from: usize, want_view: bool) -> Option<usize> {
        (from..self.subordinates.len()).find(|&i| {
            let t = self.subordinates[i].tx_type;
            if want_view {
                t == TxType::View
            } else {
                t != TxType::View
            }
        })
    }
}

impl CrosschainHandler for SubordinateMatcher<'_> {
    fn transaction(&mut self, call: &CrosschainCall) -> Result<(), Fault> {
        let Some(i) = self.next_of(self.next_tx, false) else {
            return Err(Fault::ParamMismatch {
                expected: None,
                actual: call.describe(),
            });
        };
        let expected = &self.subordinates[i];
        if !call.matches(expected) || expected.tx_type != TxType::Subordinate {
            return Err(Fault::ParamMismatch {
                expected: Some(describe_tx(expected)),
                actual: call.describe(),
            });
        }
        self.next_tx = i + 1;
        self.consumed += 1;
        Ok(())
    }

    fn view(&mut self, call: &CrosschainCall) -> Result<u64, Fault> {
        let Some(i) = self.next_of(self.next_view, true) else {
            return Err(Fault::ParamMismatch {
                expected: None,
                actual: call.describe(),
            });
        };
        let expected = &self.subordinates[i];
        if !call.matches(expected) {
            return Err(Fault::ParamMismatch {
                expected: Some(describe_tx(expected)),
                actual: call.describe(),
            });
        }
        let value = *self.views.get(&i).ok_or(Fault::MissingViewResult { position: i })?;
        self.next_view = i + 1;
        self.consumed += 1;
        Ok(value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum TrialOutcome {
    Ok,
    Reverted(Fault),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialResult {
    pub outcome: TrialOutcome,
    /// Per-contract writes; empty when reverted or read-only.
    pub writes: BTreeMap<Address, Storage>,
    pub reads: BTreeSet<(Address, u64)>,
    pub consumed_subordinates: usize,
    pub return_value: Option<u64>,
}

impl TrialResult {
    pub fn is_ok(&self) -> bool {
        self.outcome == TrialOutcome::Ok
    }
}

/// Trial-execute a transaction or view, checking every crosschain call it
/// makes against `subordinates` and answering views from `view_results`.
pub fn execute_trial(
    contracts: &ContractSet,
    target: Address,
    call: &CallPayload,
    ctx: &ExecContext,
    read_only: bool,
    subordinates: &[CrosschainTransaction],
    view_results: &ViewCache,
) -> TrialResult {
    let mut matcher = SubordinateMatcher {
        subordinates,
        views: view_results,
        next_tx: 0,
        next_view: 0,
        consumed: 0,
    };
    let out = run_call(contracts, target, call, ctx, read_only, &mut matcher);
    let consumed = matcher.consumed;
    let outcome = match out.result {
        Err(f) => Err(f),
        Ok(_) if consumed < subordinates.len() => Err(Fault::UnconsumedSubordinate {
            remaining: subordinates.len() - consumed,
        }),
        Ok(v) => Ok(v),
    };
    match outcome {
        Ok(return_value) => TrialResult {
            outcome: TrialOutcome::Ok,
            writes: if read_only { BTreeMap::new() } else { out.writes },
            reads: out.reads,
            consumed_subordinates: consumed,
            return_value,
        },
        Err(fault) => TrialResult {
            outcome: TrialOutcome::Reverted(fault),
            writes: BTreeMap::new(),
            reads: out.reads,
            consumed_subordinates: consumed,
            return_value: None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contractvm::{ContractCode, ContractSet};
    use crate::txcore::testutil::leaf;
    use std::sync::Arc;

    const B: ChainId = ChainId::new(2);
    const C_ADDR: Address = Address::from_u64(0xCC);
    const D_ADDR: Address = Address::from_u64(0xDD);
    const CON_B: Address = Address::from_u64(0xBB);

    fn func_b(env: &mut Env<'_, '_>, args: &[u64]) -> Result<Option<u64>, Fault> {
        if env.load(1) != 1 {
            let v = env.crosschain_view(ChainId::new(3), C_ADDR, "funcC", &[args[0]])?;
            let s2 = env.load(2);
            env.crosschain_transaction(ChainId::new(4), D_ADDR, "funcD", &[v + s2])?;
        }
        env.store(9, 1);
        Ok(None)
    }

    fn who(env: &mut Env<'_, '_>, _: &[u64]) -> Result<Option<u64>, Fault> {
        Ok(Some(env.context().msg_sender.to_u64()))
    }

    fn relay(env: &mut Env<'_, '_>, _: &[u64]) -> Result<Option<u64>, Fault> {
        env.call_local(Address::from_u64(0xEF), "who", &[])
    }

    fn recurse(env: &mut Env<'_, '_>, _: &[u64]) -> Result<Option<u64>, Fault> {
        let me = env.this_address();
        env.call_local(me, "recurse", &[])
    }

    fn contracts(state1: u64) -> ContractSet {
        let mut set = ContractSet::new();
        let code = Arc::new(
            ContractCode::new("conB")
                .with("funcB", 1, func_b)
                .with("who", 0, who)
                .with("relay", 0, relay)
                .with("recurse", 0, recurse),
        );
        let c = set.deploy(CON_B, true, code.clone()).unwrap();
        c.committed_storage.insert(1, state1);
        c.committed_storage.insert(2, 4);
        set.deploy(Address::from_u64(0xEF), true, code).unwrap();
        set
    }

    fn subs(d_arg: u64) -> Vec<CrosschainTransaction> {
        let mut view = leaf(TxType::View, 3, 0xCC, 2, 0xBB);
        view.data = CallPayload::new("funcC", vec![1]);
        let mut d = leaf(TxType::Subordinate, 4, 0xDD, 2, 0xBB);
        d.data = CallPayload::new("funcD", vec![d_arg]);
        vec![view, d]
    }

    fn ctx() -> ExecContext {
        ExecContext {
            msg_sender: Address::from_u64(0xEE),
            tx_origin: Address::from_u64(0xEE),
            from_address: Address::from_u64(0xAA),
            from_chain: ChainId::new(1),
            originating_chain: ChainId::new(1),
            this_chain: B,
            mode: ExecMode::Trial,
        }
    }

    fn trial(state1: u64, subs: &[CrosschainTransaction], cache: &ViewCache) -> TrialResult {
        execute_trial(
            &contracts(state1),
            CON_B,
            &CallPayload::new("funcB", vec![1]),
            &ctx(),
            false,
            subs,
            cache,
        )
    }

    #[test]
    fn expected_parameters_match() {
        let r = trial(2, &subs(10), &ViewCache::from([(0, 6)]));
        assert_eq!(r.outcome, TrialOutcome::Ok);
        assert_eq!(r.consumed_subordinates, 2);
        assert_eq!(r.writes[&CON_B][&9], 1);
    }

    #[test]
    fn wrong_expected_argument_reverts() {
        let r = trial(2, &subs(11), &ViewCache::from([(0, 6)]));
        assert!(matches!(r.outcome, TrialOutcome::Reverted(Fault::ParamMismatch { .. })));
        assert!(r.writes.is_empty());
    }

    #[test]
    fn skipped_branch_leaves_unconsumed_subordinate() {
        let r = trial(1, &subs(10), &ViewCache::from([(0, 6)]));
        assert_eq!(
            r.outcome,
            TrialOutcome::Reverted(Fault::UnconsumedSubordinate { remaining: 2 })
        );
    }

    #[test]
    fn missing_view_result() {
        let r = trial(2, &subs(10), &ViewCache::new());
        assert_eq!(
            r.outcome,
            TrialOutcome::Reverted(Fault::MissingViewResult { position: 0 })
        );
    }

    #[test]
    fn unexpected_call_with_no_subordinates() {
        let r = trial(2, &[], &ViewCache::new());
        assert!(matches!(
            r.outcome,
            TrialOutcome::Reverted(Fault::ParamMismatch { expected: None, .. })
        ));
    }

    #[test]
    fn read_only_discards_writes_and_blocks_transactions() {
        let r = execute_trial(
            &contracts(2),
            CON_B,
            &CallPayload::new("funcB", vec![1]),
            &ctx(),
            true,
            &subs(10),
            &ViewCache::from([(0, 6)]),
        );
        assert_eq!(r.outcome, TrialOutcome::Reverted(Fault::TransactionFromView));
        let r = execute_trial(
            &contracts(1),
            CON_B,
            &CallPayload::new("funcB", vec![1]),
            &ctx(),
            true,
            &[],
            &ViewCache::new(),
        );
        assert!(r.is_ok());
        assert!(r.writes.is_empty());
    }

    #[test]
    fn msg_sender_follows_local_calls() {
        let set = contracts(1);
        let direct = execute_trial(
            &set,
            CON_B,
            &CallPayload::new("who", vec![]),
            &ctx(),
            true,
            &[],
            &ViewCache::new(),
        );
        assert_eq!(direct.return_value, Some(0xEE));
        let via = execute_trial(
            &set,
            CON_B,
            &CallPayload::new("relay", vec![]),
            &ctx(),
            true,
            &[],
            &ViewCache::new(),
        );
        assert_eq!(via.return_value, Some(0xBB));
    }

    #[test]
    fn arity_and_depth_faults() {
        let set = contracts(1);
        let r = execute_trial(
            &set,
            CON_B,
            &CallPayload::new("funcB", vec![]),
            &ctx(),
            false,
            &[],
            &ViewCache::new(),
        );
        assert!(matches!(r.outcome, TrialOutcome::Reverted(Fault::ArityMismatch { .. })));
        let r = execute_trial(
            &set,
            CON_B,
            &CallPayload::new("recurse", vec![]),
            &ctx(),
            false,
            &[],
            &ViewCache::new(),
        );
        assert_eq!(r.outcome, TrialOutcome::Reverted(Fault::CallDepthExceeded));
        let r = execute_trial(
            &set,
            Address::from_u64(1),
            &CallPayload::new("x", vec![]),
            &ctx(),
            false,
            &[],
            &ViewCache::new(),
        );
        assert!(matches!(
            r.outcome,
            TrialOutcome::Reverted(Fault::UnknownContract { .. })
        ));
    }

    #[test]
    fn deterministic() {
        let a = trial(2, &subs(10), &ViewCache::from([(0, 6)]));
        let b = trial(2, &subs(10), &ViewCache::from([(0, 6)]));
        assert_eq!(a, b);
    }
}
