//! Construction-time dynamic analysis.
//!
//! The root call is executed against a committed-state snapshot with a
//! handler that, instead of checking crosschain calls, *runs* them on the
//! target chain's snapshot and records what was called with which actual
//! argument values. The recorded tree becomes the subordinate list, so the
//! signed expected values are exactly what live execution should produce.

use std::collections::BTreeMap;

use super::{
    Address, CallPayload, ChainId, CrosschainTransaction, CrosschainTxId, EoaKey, SignedEnvelope, TxError, TxType,
};
use crate::contractvm::{run_call, ContractSet, CrosschainCall, CrosschainHandler, ExecContext, ExecMode, Fault};
use crate::rng::rng_stream;

#[derive(Debug, Clone, Default)]
pub struct ChainSnapshot {
    pub contracts: ContractSet,
    pub nonces: BTreeMap<Address, u64>,
}

/// Committed state of every chain a construction pass may touch.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    pub chains: BTreeMap<ChainId, ChainSnapshot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoordinationParams {
    pub chain: ChainId,
    pub contract: Address,
    pub timeout_block: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct EoaAccount {
    pub address: Address,
    pub key: EoaKey,
}

/// Fields every element of the nest shares.
#[derive(Clone, Copy)]
struct Common {
    sender: Address,
    coordination: CoordinationParams,
    tx_id: CrosschainTxId,
    originating_chain: ChainId,
}

struct Constructor<'s> {
    snapshot: &'s Snapshot,
    common: Common,
    nonces: &'s mut BTreeMap<ChainId, u64>,
    parent_chain: ChainId,
    parent_to: Address,
    recorded: Vec<CrosschainTransaction>,
}

impl Constructor<'_> {
    fn next_nonce(&mut self, chain: ChainId) -> u64 {
        let snap = self.snapshot;
        let sender = self.common.sender;
        let n = self.nonces.entry(chain).or_insert_with(|| {
            snap.chains
                .get(&chain)
                .and_then(|c| c.nonces.get(&sender).copied())
                .unwrap_or(0)
        });
        let out = *n;
        *n += 1;
        out
    }

    /// Run `call` in construction mode and record it as a subordinate.
    fn record(&mut self, call: &CrosschainCall, tx_type: TxType) -> Result<Option<u64>, Fault> {
        let chain = self
            .snapshot
            .chains
            .get(&call.chain)
            .ok_or(Fault::UnknownContract { address: call.contract })?;
        let nonce = self.next_nonce(call.chain);
        let ctx = ExecContext {
            msg_sender: self.common.sender,
            tx_origin: self.common.sender,
            from_address: self.parent_to,
            from_chain: self.parent_chain,
            originating_chain: self.common.originating_chain,
            this_chain: call.chain,
            mode: ExecMode::Construction,
        };
        let mut child = Constructor {
            snapshot: self.snapshot,
            common: self.common,
            nonces: &mut *self.nonces,
            parent_chain: call.chain,
            parent_to: call.contract,
            recorded: Vec::new(),
        };
        let read_only = tx_type == TxType::View;
        let out = run_call(
            &chain.contracts,
            call.contract,
            &call.payload,
            &ctx,
            read_only,
            &mut child,
        );
        let value = out.result?;
        let subordinates = child.recorded;
        self.recorded.push(element(
            tx_type,
            nonce,
            call.contract,
            call.payload.clone(),
            call.chain,
            self.common,
            self.parent_chain,
            self.parent_to,
            subordinates,
        ));
        Ok(value)
    }
}

impl CrosschainHandler for Constructor<'_> {
    fn transaction(&mut self, call: &CrosschainCall) -> Result<(), Fault> {
        self.record(call, TxType::Subordinate).map(|_| ())
    }

    fn view(&mut self, call: &CrosschainCall) -> Result<u64, Fault> {
        self.record(call, TxType::View)?
            .ok_or_else(|| Fault::ViewReturnedNothing {
                function: call.payload.function_name.clone(),
            })
    }
}

#[allow(clippy::too_many_arguments)]
fn element(
    tx_type: TxType,
    nonce: u64,
    to: Address,
    data: CallPayload,
    chain_id: ChainId,
    common: Common,
    from_chain: ChainId,
    from_address: Address,
    subordinates: Vec<CrosschainTransaction>,
) -> CrosschainTransaction {
    CrosschainTransaction {
        tx_type,
        nonce,
        gas_price: 0,
        gas_limit: 0,
        to,
        value: 0,
        data,
        chain_id,
        sender: common.sender,
        coordination_chain: common.coordination.chain,
        coordination_contract: common.coordination.contract,
        timeout_block: common.coordination.timeout_block,
        crosschain_tx_id: common.tx_id,
        originating_chain: common.originating_chain,
        from_chain,
        from_address,
        subordinates,
    }
}

/// Build and sign the nested transaction for `root_call` on `root_contract`.
///
/// The crosschain transaction id is drawn from `seed`; identical inputs give a
/// byte-identical envelope. The root's `from_chain`/`from_address` are its own
/// chain and the submitting account.
pub fn build_crosschain_tx(
    root_call: &CallPayload,
    root_chain: ChainId,
    root_contract: Address,
    snapshot: &Snapshot,
    coordination: CoordinationParams,
    origin: &EoaAccount,
    seed: u64,
) -> Result<SignedEnvelope, TxError> {
    let chain = snapshot
        .chains
        .get(&root_chain)
        .ok_or(TxError::UnknownChain(root_chain))?;
    let tx_id = CrosschainTxId(rng_stream(seed, "txcore/tx-id").next_u64());
    let common = Common {
        sender: origin.address,
        coordination,
        tx_id,
        originating_chain: root_chain,
    };
    let mut nonces = BTreeMap::new();
    let mut root = Constructor {
        snapshot,
        common,
        nonces: &mut nonces,
        parent_chain: root_chain,
        parent_to: root_contract,
        recorded: Vec::new(),
    };
    let nonce = root.next_nonce(root_chain);
    let ctx = ExecContext {
        msg_sender: origin.address,
        tx_origin: origin.address,
        from_address: origin.address,
        from_chain: root_chain,
        originating_chain: root_chain,
        this_chain: root_chain,
        mode: ExecMode::Construction,
    };
    let out = run_call(&chain.contracts, root_contract, root_call, &ctx, false, &mut root);
    out.result.map_err(TxError::ConstructionFault)?;
    let subordinates = root.recorded;
    let body = element(
        TxType::Originating,
        nonce,
        root_contract,
        root_call.clone(),
        root_chain,
        common,
        root_chain,
        origin.address,
        subordinates,
    );
    Ok(SignedEnvelope::sign(body, &origin.key))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contractvm::{ContractCode, Env};
    use crate::txcore::{encode, validate_nesting};
    use std::sync::Arc;

    const A: ChainId = ChainId::new(1);
    const B: ChainId = ChainId::new(2);
    const C: ChainId = ChainId::new(3);
    const D: ChainId = ChainId::new(4);
    const CON_A: Address = Address::from_u64(0xA);
    const CON_B: Address = Address::from_u64(0xB);
    const CON_C: Address = Address::from_u64(0xC);
    const CON_D: Address = Address::from_u64(0xD);

    fn func_a(env: &mut Env<'_, '_>, args: &[u64]) -> Result<Option<u64>, Fault> {
        env.crosschain_transaction(B, CON_B, "funcB", &[args[0]])?;
        Ok(None)
    }

    fn func_b(env: &mut Env<'_, '_>, args: &[u64]) -> Result<Option<u64>, Fault> {
        if env.load(1) != 1 {
            let v = env.crosschain_view(C, CON_C, "funcC", &[args[0]])?;
            let state2 = env.load(2);
            env.crosschain_transaction(D, CON_D, "funcD", &[v + state2])?;
        }
        Ok(None)
    }

    fn func_c(env: &mut Env<'_, '_>, args: &[u64]) -> Result<Option<u64>, Fault> {
        Ok(Some(args[0] + env.load(1)))
    }

    fn func_d(env: &mut Env<'_, '_>, args: &[u64]) -> Result<Option<u64>, Fault> {
        env.store(1, args[0]);
        Ok(None)
    }

    fn bad(env: &mut Env<'_, '_>, _: &[u64]) -> Result<Option<u64>, Fault> {
        env.require(false, "nope")?;
        Ok(None)
    }

    fn snapshot(state1: u64) -> Snapshot {
        let mut snap = Snapshot::default();
        let mut deploy = |chain, addr, code: ContractCode, storage: &[(u64, u64)]| {
            let cs = snap.chains.entry(chain).or_default();
            let c = cs.contracts.deploy(addr, true, Arc::new(code)).unwrap();
            c.committed_storage.extend(storage.iter().copied());
        };
        deploy(
            A,
            CON_A,
            ContractCode::new("ConA").with("funcA", 1, func_a).with("bad", 0, bad),
            &[],
        );
        deploy(
            B,
            CON_B,
            ContractCode::new("ConB").with("funcB", 1, func_b),
            &[(1, state1), (2, 4)],
        );
        deploy(C, CON_C, ContractCode::new("ConC").with("funcC", 1, func_c), &[(1, 5)]);
        deploy(D, CON_D, ContractCode::new("ConD").with("funcD", 1, func_d), &[]);
        snap
    }

    fn origin() -> EoaAccount {
        let address = Address::from_u64(0xEE);
        EoaAccount {
            address,
            key: EoaKey::derive(address, 1),
        }
    }

    fn coord() -> CoordinationParams {
        CoordinationParams {
            chain: ChainId::new(100),
            contract: Address::from_u64(0xC0),
            timeout_block: 40,
        }
    }

    fn build(state1: u64, seed: u64) -> Result<SignedEnvelope, TxError> {
        build_crosschain_tx(
            &CallPayload::new("funcA", vec![1]),
            A,
            CON_A,
            &snapshot(state1),
            coord(),
            &origin(),
            seed,
        )
    }

    #[test]
    fn records_actual_arguments() {
        let env = build(2, 3).unwrap();
        let root = &env.body;
        assert_eq!(root.tx_type, TxType::Originating);
        let b = &root.subordinates[0];
        assert_eq!(b.data, CallPayload::new("funcB", vec![1]));
        assert_eq!(b.from_address, CON_A);
        assert_eq!(b.subordinates.len(), 2);
        assert_eq!(b.subordinates[0].tx_type, TxType::View);
        assert_eq!(b.subordinates[0].data, CallPayload::new("funcC", vec![1]));
        assert_eq!(b.subordinates[1].tx_type, TxType::Subordinate);
        assert_eq!(b.subordinates[1].data, CallPayload::new("funcD", vec![10]));
        assert_eq!(b.subordinates[1].from_chain, B);
        assert_eq!(b.subordinates[1].from_address, CON_B);
        assert!(validate_nesting(root).is_empty());
        assert!(env.verify(&origin().key));
    }

    #[test]
    fn infeasible_branch_records_nothing() {
        let env = build(1, 3).unwrap();
        assert!(env.body.subordinates[0].subordinates.is_empty());
    }

    #[test]
    fn deterministic_bytes() {
        assert_eq!(encode(&build(2, 9).unwrap().body), encode(&build(2, 9).unwrap().body));
        assert_ne!(
            build(2, 9).unwrap().body.crosschain_tx_id,
            build(2, 10).unwrap().body.crosschain_tx_id
        );
    }

    #[test]
    fn no_crosschain_calls() {
        let env = build_crosschain_tx(
            &CallPayload::new("funcD", vec![3]),
            D,
            CON_D,
            &snapshot(2),
            coord(),
            &origin(),
            1,
        )
        .unwrap();
        assert!(env.body.subordinates.is_empty());
        assert_eq!(env.body.tx_type, TxType::Originating);
    }

    #[test]
    fn construction_fault() {
        let r = build_crosschain_tx(
            &CallPayload::new("bad", vec![]),
            A,
            CON_A,
            &snapshot(2),
            coord(),
            &origin(),
            1,
        );
        assert!(matches!(
            r,
            Err(TxError::ConstructionFault(Fault::ContractFault { .. }))
        ));
    }
}
