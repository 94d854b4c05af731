//! Validator and coordinating-node behaviour.
//!
//! Chain state is replicated: every validator of a chain sees the same
//! contracts, pool and mined blocks, so those live on the chain. What is
//! per-node is the key share, byzantine style, crash flag and local timers.
//! Protocol steps are implemented as handlers on [`World`], one per event.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use crate::contractvm::{check_lock, execute_trial, ExecContext, ExecMode, Storage, TrialOutcome, ViewCache};
use crate::coord::{commit_message, ignore_message, start_message, CoordError, CoordStatus};
use crate::rng::rng_stream;
use crate::sim::{ByzantineStyle, CoordAction, CoordTx, CrashPoint, Decision, MessageClass, NodeRef, Payload, World};
use crate::tsig::{self, combine_verified, sign_share, GroupScalar, KeyShare, ThresholdSignature};
use crate::txcore::{
    build_crosschain_tx, validate_nesting, Address, ChainId, ChainSnapshot, CoordinationParams, CrosschainTransaction,
    CrosschainTxId, EoaAccount, EoaKey, Snapshot, TxType,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatorNode {
    pub chain: ChainId,
    pub node_id: u32,
    pub key_share: KeyShare,
    pub byzantine: Option<ByzantineStyle>,
    pub crashed: bool,
    /// Expiry tick per crosschain transaction.
    pub local_timers: BTreeMap<CrosschainTxId, u64>,
}

impl ValidatorNode {
    pub fn new(chain: ChainId, node_id: u32, key_share: KeyShare) -> Self {
        ValidatorNode {
            chain,
            node_id,
            key_share,
            byzantine: None,
            crashed: false,
            local_timers: BTreeMap::new(),
        }
    }

    /// Crashed, or a byzantine validator that never answers.
    pub fn is_down(&self) -> bool {
        self.crashed || self.byzantine == Some(ByzantineStyle::Crash)
    }

    /// This validator's contribution to a threshold signature.
    pub fn share_for(&self, msg: &[u8]) -> Option<tsig::SignatureShare> {
        if self.is_down() {
            return None;
        }
        let mut s = sign_share(&self.key_share, msg);
        if self.byzantine == Some(ByzantineStyle::Corrupt) {
            s.value = s.value + GroupScalar::ONE;
        }
        Some(s)
    }
}

/// `"READY" || tx_id || chain || ordinal`. The ordinal is the position of the
/// subordinate transaction among all subordinate transactions of the nest in
/// depth-first order, so one chain can report several of them separately.
pub fn ready_message(tx_id: CrosschainTxId, chain: ChainId, ordinal: u64) -> Vec<u8> {
    let mut m = b"READY".to_vec();
    m.extend_from_slice(&tx_id.0.to_be_bytes());
    m.extend_from_slice(&chain.value().to_be_bytes());
    m.extend_from_slice(&ordinal.to_be_bytes());
    m
}

/// `"VIEWRESULT" || tx_id || chain || block_number || value`.
pub fn view_result_message(tx_id: CrosschainTxId, chain: ChainId, block_number: u64, value: u64) -> Vec<u8> {
    let mut m = b"VIEWRESULT".to_vec();
    m.extend_from_slice(&tx_id.0.to_be_bytes());
    m.extend_from_slice(&chain.value().to_be_bytes());
    m.extend_from_slice(&block_number.to_be_bytes());
    m.extend_from_slice(&value.to_be_bytes());
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReadyMessage {
    pub tx_id: CrosschainTxId,
    pub chain: ChainId,
    pub ordinal: u64,
    pub key_version: u64,
    pub sig: ThresholdSignature,
}

impl ReadyMessage {
    pub fn message(&self) -> Vec<u8> {
        ready_message(self.tx_id, self.chain, self.ordinal)
    }

    pub fn verify(&self, public_key: GroupScalar) -> bool {
        tsig::verify(public_key, &self.message(), &self.sig)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SignedViewResult {
    pub tx_id: CrosschainTxId,
    pub chain: ChainId,
    pub block_number: u64,
    pub value: u64,
    pub key_version: u64,
    pub sig: ThresholdSignature,
}

impl SignedViewResult {
    pub fn message(&self) -> Vec<u8> {
        view_result_message(self.tx_id, self.chain, self.block_number, self.value)
    }

    pub fn verify(&self, public_key: GroupScalar) -> bool {
        tsig::verify(public_key, &self.message(), &self.sig)
    }
}

/// A nested element to process, with enough context to report back.
#[derive(Debug, Clone)]
pub struct Job {
    pub root: Arc<CrosschainTransaction>,
    pub path: Vec<usize>,
    pub coordinator: NodeRef,
    /// Index of the multichain node relaying this transaction.
    pub owner: usize,
    /// For views: the node waiting for the result.
    pub reply_to: Option<NodeRef>,
}

impl Job {
    pub fn tx(&self) -> &CrosschainTransaction {
        self.root.at_path(&self.path).expect("job path inside its nest")
    }

    pub fn tx_id(&self) -> CrosschainTxId {
        self.root.crosschain_tx_id
    }

    fn child(&self, index: usize, reply_to: Option<NodeRef>) -> Job {
        let mut path = self.path.clone();
        path.push(index);
        Job {
            root: self.root.clone(),
            path,
            coordinator: self.coordinator,
            owner: self.owner,
            reply_to,
        }
    }

    fn path_json(&self) -> serde_json::Value {
        json!(self.path)
    }
}

/// Subordinate transactions (not views) of a nest with their ordinals.
pub fn subordinate_ordinals(root: &CrosschainTransaction) -> Vec<(Vec<usize>, ChainId)> {
    root.walk()
        .into_iter()
        .filter(|(_, t)| t.tx_type == TxType::Subordinate)
        .map(|(p, t)| (p, t.chain_id))
        .collect()
}

/// A transaction waiting for the results of its subordinate views.
#[derive(Debug, Clone)]
pub struct Processing {
    pub node: NodeRef,
    pub job: Job,
    pub views: ViewCache,
    pub awaiting: BTreeSet<usize>,
}

#[derive(Debug, Clone)]
pub enum PoolEntry {
    Tx {
        node: NodeRef,
        job: Job,
        writes: BTreeMap<Address, Storage>,
        lock_set: BTreeSet<Address>,
    },
    Signalling {
        node: NodeRef,
        tx_id: CrosschainTxId,
    },
}

fn status_name(s: CoordStatus) -> &'static str {
    match s {
        CoordStatus::NotStarted => "NotStarted",
        CoordStatus::Started => "Started",
        CoordStatus::Committed => "Committed",
        CoordStatus::Ignored => "Ignored",
    }
}

impl World {
    /// Gather shares from the chain's validators and combine `m` that verify.
    pub(crate) fn chain_sign(&self, chain: ChainId, msg: &[u8]) -> Option<(ThresholdSignature, u64)> {
        let cs = &self.chains[&chain];
        let shares: Vec<_> = cs.validators.iter().filter_map(|v| v.share_for(msg)).collect();
        combine_verified(cs.public_key, msg, &shares, cs.cfg).map(|sig| (sig, cs.key_version))
    }

    /// Verify a signature by `signer` as seen from a node on `receiver`,
    /// refreshing the receiver's cached key when the message names a newer version.
    pub(crate) fn verify_from(
        &mut self,
        receiver: ChainId,
        signer: ChainId,
        version: u64,
        msg: &[u8],
        sig: &ThresholdSignature,
    ) -> bool {
        let cached = self.chains[&receiver].key_cache.get(&signer).copied();
        let entry = match cached {
            Some(e) if e.version == version => Some(e),
            Some(e) if e.version > version => self.coord.registry().get(signer, version).copied(),
            _ => {
                let latest = self.coord.registry().latest(signer).copied();
                if let Some(l) = latest {
                    self.chains.get_mut(&receiver).unwrap().key_cache.insert(signer, l);
                    self.record_chain(
                        "key_refresh",
                        receiver,
                        None,
                        json!({ "signer": signer.value(), "version": l.version }),
                    );
                }
                latest.filter(|l| l.version == version)
            }
        };
        entry.is_some_and(|e| tsig::verify(e.public_key, msg, sig))
    }

    fn reject_submission(&mut self, i: usize, node: Option<NodeRef>, reason: String) {
        self.record(
            "submission_rejected",
            node,
            self.submissions[i].tx_id,
            json!({ "index": i, "reason": reason }),
        );
        self.submissions[i].rejected = Some(reason);
    }

    pub(crate) fn on_submit(&mut self, i: usize) {
        let s = self.config.submissions[i].clone();
        let owner = self
            .config
            .multichain_nodes
            .iter()
            .position(|m| m.owner == s.via)
            .expect("validated owner");

        let mut snapshot = Snapshot::default();
        for (&id, cs) in &self.chains {
            snapshot.chains.insert(
                id,
                ChainSnapshot {
                    contracts: cs.contracts.clone(),
                    nonces: cs.nonces.clone(),
                },
            );
        }
        for o in &s.snapshot_overrides {
            if let Some(c) = snapshot
                .chains
                .get_mut(&o.chain)
                .and_then(|c| c.contracts.get_mut(o.contract))
            {
                c.committed_storage.insert(o.key, o.value);
            }
        }
        let account = EoaAccount {
            address: s.sender,
            key: EoaKey::derive(s.sender, self.seed),
        };
        let coordination = CoordinationParams {
            chain: self.config.coordination.chain,
            contract: self.config.coordination.contract,
            timeout_block: self.coord.current_block() + s.timeout_blocks,
        };
        let tx_seed = rng_stream(self.seed, &format!("sim/submission/{i}")).next_u64();
        let call = crate::txcore::CallPayload::new(s.function.clone(), s.args.clone());
        let mut env = match build_crosschain_tx(&call, s.chain, s.contract, &snapshot, coordination, &account, tx_seed)
        {
            Ok(env) => env,
            Err(e) => {
                let reason = match e {
                    crate::txcore::TxError::ConstructionFault(f) => format!("ConstructionFault({})", f.kind()),
                    other => other.to_string(),
                };
                self.reject_submission(i, None, reason);
                return;
            }
        };
        if !s.arg_overrides.is_empty() {
            let mut body = env.body.clone();
            for o in &s.arg_overrides {
                if let Some(t) = body.at_path_mut(&o.path) {
                    t.data.args = o.args.clone();
                }
            }
            env = crate::txcore::SignedEnvelope::sign(body, &account.key);
        }
        if s.tamper_signature {
            env.eoa_signature[0] ^= 1;
        }
        let tx_id = env.body.crosschain_tx_id;
        self.submissions[i].tx_id = Some(tx_id);
        self.record(
            "submission",
            None,
            Some(tx_id),
            json!({ "index": i, "label": s.label, "via": s.via, "transaction": env.body.debug_json() }),
        );

        let Some(coordinator) = self.member(owner, s.chain) else {
            self.reject_submission(i, None, format!("MultichainNodeMissingChain({})", s.chain));
            return;
        };
        if self.is_down(coordinator) {
            self.reject_submission(i, Some(coordinator), "CoordinatorDown".into());
            return;
        }
        if self.crash_if(coordinator, CrashPoint::BeforeStart, tx_id) {
            self.submissions[i].rejected = Some("CoordinatorCrashed".into());
            return;
        }
        if !env.verify(&account.key) {
            self.reject_submission(i, Some(coordinator), "BadEoaSignature".into());
            return;
        }
        let violations = validate_nesting(&env.body);
        if !violations.is_empty() {
            let reason = format!("NestingInvalid({} violations)", violations.len());
            self.reject_submission(i, Some(coordinator), reason);
            return;
        }
        if let Some(c) = env.body.chains().into_iter().find(|&c| self.member(owner, c).is_none()) {
            self.reject_submission(i, Some(coordinator), format!("MultichainNodeMissingChain({c})"));
            return;
        }
        if self.coord_txs.contains_key(&tx_id) {
            self.reject_submission(i, Some(coordinator), "DuplicateTxId".into());
            return;
        }
        let timeout_block = env.body.timeout_block;
        let msg = start_message(tx_id, timeout_block, s.chain);
        let Some((sig, _)) = self.chain_sign(s.chain, &msg) else {
            self.reject_submission(i, Some(coordinator), "StartRejected(signing)".into());
            return;
        };
        let root = Arc::new(env.body);
        let expected = subordinate_ordinals(&root)
            .into_iter()
            .enumerate()
            .map(|(k, (_, chain))| (k, chain))
            .collect();
        self.coord_txs.insert(
            tx_id,
            CoordTx {
                root,
                coordinator,
                owner,
                submission: i,
                expected,
                ready: BTreeSet::new(),
                root_mined: false,
                decided: None,
            },
        );
        self.record(
            "start_signed",
            Some(coordinator),
            Some(tx_id),
            json!({ "timeout_block": timeout_block }),
        );
        let delay = self.network_delay();
        self.schedule_in(
            delay,
            Payload::CoordSubmit {
                from: coordinator,
                tx_id,
                action: CoordAction::Start {
                    originating_chain: s.chain,
                    timeout_block,
                    sig,
                },
            },
        );
    }

    pub(crate) fn on_coord_submit(&mut self, from: NodeRef, tx_id: CrosschainTxId, action: CoordAction) {
        let coord_chain = self.coord.chain;
        let block = self.coord.current_block();
        let (kind, decision, result, extra) = match action {
            CoordAction::Start {
                originating_chain,
                timeout_block,
                sig,
            } => {
                let r = self.coord.submit_start(tx_id, originating_chain, timeout_block, &sig);
                (
                    "coord_start",
                    None,
                    r,
                    json!({ "timeout_block": timeout_block, "originating_chain": originating_chain.value() }),
                )
            }
            CoordAction::Finish { decision, sig } => {
                let r = match decision {
                    Decision::Commit => self.coord.submit_commit(tx_id, &sig),
                    Decision::Ignore => self.coord.submit_ignore(tx_id, &sig),
                };
                let kind = match decision {
                    Decision::Commit => "coord_commit",
                    Decision::Ignore => "coord_ignore",
                };
                (kind, Some(decision), r, json!({}))
            }
        };
        let mut details = extra;
        details["accepted"] = json!(result.is_ok());
        details["block"] = json!(block);
        if let Err(e) = &result {
            details["error"] = json!(e.kind());
        }
        self.record_chain(kind, coord_chain, Some(tx_id), details);
        let delay = self.network_delay();
        self.schedule_in(
            delay,
            Payload::CoordOutcome {
                to: from,
                tx_id,
                decision,
                result,
            },
        );
    }

    pub(crate) fn on_coord_outcome(
        &mut self,
        to: NodeRef,
        tx_id: CrosschainTxId,
        decision: Option<Decision>,
        result: Result<(), CoordError>,
    ) {
        if self.is_down(to) {
            return;
        }
        let Some(st) = self.coord_txs.get(&tx_id) else {
            return;
        };
        let root = st.root.clone();
        let owner = st.owner;
        let submission = st.submission;
        match (decision, result) {
            (None, Ok(())) => {
                self.record("start_accepted", Some(to), Some(tx_id), json!({}));
                self.set_timers(to.chain, tx_id, root.timeout_block);
                let job = Job {
                    root,
                    path: Vec::new(),
                    coordinator: to,
                    owner,
                    reply_to: None,
                };
                self.on_process(to, job);
            }
            (None, Err(e)) => {
                let reason = format!("StartRejected({})", e.kind());
                self.reject_submission(submission, Some(to), reason);
            }
            (Some(d), Ok(())) => {
                if d == Decision::Commit && self.crash_if(to, CrashPoint::AfterCommit, tx_id) {
                    return;
                }
                let chains: BTreeSet<ChainId> = root
                    .walk()
                    .into_iter()
                    .filter(|(_, t)| t.tx_type != TxType::View)
                    .map(|(_, t)| t.chain_id)
                    .collect();
                for chain in chains {
                    let Some(target) = self.member(owner, chain) else {
                        continue;
                    };
                    self.record(
                        "signalling_request",
                        Some(to),
                        Some(tx_id),
                        json!({ "target_chain": chain.value(), "decision": d.name() }),
                    );
                    self.send(
                        MessageClass::SignallingRequest,
                        tx_id,
                        target,
                        Payload::SignallingRequest { to: target, tx_id },
                    );
                }
            }
            (Some(d), Err(e)) => {
                self.record(
                    "decision_rejected",
                    Some(to),
                    Some(tx_id),
                    json!({ "decision": d.name(), "error": e.kind() }),
                );
            }
        }
    }

    pub(crate) fn on_process(&mut self, node: NodeRef, job: Job) {
        let tx_id = job.tx_id();
        let status = self.coord.current_status(tx_id);
        let tx = job.tx().clone();
        if status != CoordStatus::Started {
            self.record(
                "process_skipped",
                Some(node),
                Some(tx_id),
                json!({ "path": job.path_json(), "status": status_name(status) }),
            );
            return;
        }
        if tx.chain_id != node.chain {
            self.fail(node, &job, "WrongChain".into(), String::new());
            return;
        }
        self.record(
            "process",
            Some(node),
            Some(tx_id),
            json!({ "path": job.path_json(), "type": tx.tx_type.name(), "call": tx.data.to_string() }),
        );
        let views: Vec<usize> = tx
            .subordinates
            .iter()
            .enumerate()
            .filter(|(_, s)| s.tx_type == TxType::View)
            .map(|(i, _)| i)
            .collect();
        if views.is_empty() {
            self.run_trial(node, job, ViewCache::new());
            return;
        }
        let mut targets = Vec::new();
        for &i in &views {
            let chain = tx.subordinates[i].chain_id;
            match self.member(job.owner, chain) {
                Some(t) => targets.push((i, t)),
                None => {
                    self.fail(
                        node,
                        &job,
                        format!("MultichainNodeMissingChain({chain})"),
                        String::new(),
                    );
                    return;
                }
            }
        }
        self.chains.get_mut(&node.chain).unwrap().processing.insert(
            (tx_id, job.path.clone()),
            Processing {
                node,
                job: job.clone(),
                views: ViewCache::new(),
                awaiting: views.iter().copied().collect(),
            },
        );
        for (i, target) in targets {
            let child = job.child(i, Some(node));
            self.record(
                "view_request",
                Some(node),
                Some(tx_id),
                json!({ "path": child.path_json(), "target": target.to_string() }),
            );
            self.send(
                MessageClass::ViewRequest,
                tx_id,
                target,
                Payload::Process { to: target, job: child },
            );
        }
    }

    pub(crate) fn on_view_reply(&mut self, node: NodeRef, child: Job, result: Result<SignedViewResult, String>) {
        let tx_id = child.tx_id();
        let (&pos, parent_path) = child.path.split_last().expect("view is nested");
        let key = (tx_id, parent_path.to_vec());
        let Some(mut p) = self.chains.get_mut(&node.chain).unwrap().processing.remove(&key) else {
            return;
        };
        let view_chain = child.tx().chain_id;
        match result {
            Err(reason) => {
                self.fail(node, &p.job, format!("ViewFailed({reason})"), String::new());
            }
            Ok(svr) => {
                let ok = svr.tx_id == tx_id
                    && svr.chain == view_chain
                    && self.verify_from(node.chain, svr.chain, svr.key_version, &svr.message(), &svr.sig);
                if !ok {
                    self.fail(node, &p.job, "ViewSignatureInvalid".into(), String::new());
                    return;
                }
                self.record(
                    "view_result",
                    Some(node),
                    Some(tx_id),
                    json!({ "path": child.path_json(), "value": svr.value, "block": svr.block_number }),
                );
                p.views.insert(pos, svr.value);
                p.awaiting.remove(&pos);
                if p.awaiting.is_empty() {
                    self.run_trial(node, p.job, p.views);
                } else {
                    self.chains.get_mut(&node.chain).unwrap().processing.insert(key, p);
                }
            }
        }
    }

    fn run_trial(&mut self, node: NodeRef, job: Job, views: ViewCache) {
        let tx_id = job.tx_id();
        let tx = job.tx().clone();
        let is_view = tx.tx_type == TxType::View;
        let cs = &self.chains[&node.chain];
        let ctx = ExecContext::for_transaction(&tx, ExecMode::Trial);
        let res = execute_trial(&cs.contracts, tx.to, &tx.data, &ctx, is_view, &tx.subordinates, &views);
        let height = cs.height;
        match &res.outcome {
            TrialOutcome::Ok => self.record(
                "trial",
                Some(node),
                Some(tx_id),
                json!({ "path": job.path_json(), "outcome": "ok", "consumed": res.consumed_subordinates }),
            ),
            TrialOutcome::Reverted(f) => {
                self.record(
                    "trial",
                    Some(node),
                    Some(tx_id),
                    json!({ "path": job.path_json(), "outcome": "reverted", "reason": f.kind(), "detail": f.to_string() }),
                );
                self.fail(node, &job, f.kind().to_string(), f.to_string());
                return;
            }
        }
        if is_view {
            let Some(value) = res.return_value else {
                self.fail(node, &job, "ViewReturnedNothing".into(), String::new());
                return;
            };
            let msg = view_result_message(tx_id, node.chain, height, value);
            let Some((sig, key_version)) = self.chain_sign(node.chain, &msg) else {
                self.fail(node, &job, "ViewSigningFailed".into(), String::new());
                return;
            };
            let svr = SignedViewResult {
                tx_id,
                chain: node.chain,
                block_number: height,
                value,
                key_version,
                sig,
            };
            let to = job.reply_to.expect("views have a requester");
            self.send(
                MessageClass::ViewReply,
                tx_id,
                to,
                Payload::ViewReply {
                    to,
                    job,
                    result: Ok(svr),
                },
            );
            return;
        }

        let cs = self.chains.get_mut(&node.chain).unwrap();
        let mut lock_set: BTreeSet<Address> = res.writes.keys().copied().collect();
        if cs.contracts.get(tx.to).is_some_and(|c| c.lockable) {
            lock_set.insert(tx.to);
        }
        for &a in &lock_set {
            if let Err(f) = cs.contracts.check_lock_pending(a, tx_id) {
                self.record(
                    "lock_fault",
                    Some(node),
                    Some(tx_id),
                    json!({ "path": job.path_json(), "contract": a.to_string(), "reason": f.kind() }),
                );
                self.fail(node, &job, f.kind().to_string(), f.to_string());
                return;
            }
        }
        for &a in &lock_set {
            cs.contracts.reserve(a, tx_id);
        }
        let names: Vec<String> = lock_set.iter().map(|a| a.to_string()).collect();
        self.record(
            "reserve",
            Some(node),
            Some(tx_id),
            json!({ "path": job.path_json(), "contracts": names }),
        );
        let d = self.config.params.mining_delay;
        self.schedule_in(
            d,
            Payload::Mine {
                chain: node.chain,
                entry: PoolEntry::Tx {
                    node,
                    job,
                    writes: res.writes,
                    lock_set,
                },
            },
        );
    }

    /// A transaction failed at `node`: views answer their requester, everything
    /// else reports to the coordinating node.
    fn fail(&mut self, node: NodeRef, job: &Job, reason: String, detail: String) {
        let tx_id = job.tx_id();
        self.record(
            "tx_failed",
            Some(node),
            Some(tx_id),
            json!({ "path": job.path_json(), "reason": reason, "detail": detail }),
        );
        if job.tx().tx_type == TxType::View {
            let to = job.reply_to.expect("views have a requester");
            self.send(
                MessageClass::ViewReply,
                tx_id,
                to,
                Payload::ViewReply {
                    to,
                    job: job.clone(),
                    result: Err(reason),
                },
            );
            return;
        }
        let coordinator = job.coordinator;
        if coordinator == node {
            self.on_error(node, tx_id, node.chain, reason);
        } else {
            self.send(
                MessageClass::ErrorReport,
                tx_id,
                coordinator,
                Payload::ErrorReport {
                    to: coordinator,
                    tx_id,
                    from_chain: node.chain,
                    reason,
                },
            );
        }
    }

    pub(crate) fn on_mine(&mut self, chain: ChainId, entry: PoolEntry) {
        match entry {
            PoolEntry::Signalling { node, tx_id } => self.handle_signalling(chain, node, tx_id),
            PoolEntry::Tx {
                node,
                job,
                writes,
                lock_set,
            } => self.mine_tx(chain, node, job, writes, lock_set),
        }
    }

    fn mine_tx(
        &mut self,
        chain: ChainId,
        node: NodeRef,
        job: Job,
        mut writes: BTreeMap<Address, Storage>,
        lock_set: BTreeSet<Address>,
    ) {
        let tx_id = job.tx_id();
        let tx = job.tx().clone();
        let status = self.coord.current_status(tx_id);
        let cs = self.chains.get_mut(&chain).unwrap();
        for &a in &lock_set {
            cs.contracts.release(a, tx_id);
        }
        if status != CoordStatus::Started {
            self.record_chain(
                "mine_skipped",
                chain,
                Some(tx_id),
                json!({ "path": job.path_json(), "status": status_name(status) }),
            );
            return;
        }
        for &a in &lock_set {
            let c = cs.contracts.get(a).expect("trial ran against it");
            if let Err(f) = check_lock(c, tx_id) {
                let reason = crate::contractvm::Fault::Lock { address: a, fault: f };
                self.record_chain(
                    "mine_skipped",
                    chain,
                    Some(tx_id),
                    json!({ "path": job.path_json(), "reason": reason.kind() }),
                );
                self.fail(node, &job, reason.kind().to_string(), reason.to_string());
                return;
            }
        }
        cs.height += 1;
        let height = cs.height;
        let nonce = cs.nonces.entry(tx.sender).or_insert(0);
        *nonce = (*nonce).max(tx.nonce + 1);
        let mut staged = Vec::new();
        for &a in &lock_set {
            let w = writes.remove(&a).unwrap_or_default();
            cs.contracts
                .get_mut(a)
                .unwrap()
                .lock_and_stage(w.clone(), tx_id)
                .expect("lock checked");
            staged.push((a, w));
        }
        cs.locks_by_tx
            .entry(tx_id)
            .or_default()
            .extend(lock_set.iter().copied());
        self.record_chain(
            "mined",
            chain,
            Some(tx_id),
            json!({ "path": job.path_json(), "type": tx.tx_type.name(), "block": height }),
        );
        for (a, w) in staged {
            self.record_chain(
                "stage",
                chain,
                Some(tx_id),
                json!({ "contract": a.to_string(), "writes": w }),
            );
        }
        self.set_timers(chain, tx_id, tx.timeout_block);

        if self.is_down(node) {
            return;
        }
        if tx.tx_type == TxType::Subordinate && self.crash_if(node, CrashPoint::SubordinateCoordinator, tx_id) {
            return;
        }
        for (i, sub) in tx.subordinates.iter().enumerate() {
            if sub.tx_type != TxType::Subordinate {
                continue;
            }
            let Some(target) = self.member(job.owner, sub.chain_id) else {
                self.fail(
                    node,
                    &job,
                    format!("MultichainNodeMissingChain({})", sub.chain_id),
                    String::new(),
                );
                return;
            };
            let child = job.child(i, None);
            self.record(
                "dispatch",
                Some(node),
                Some(tx_id),
                json!({ "path": child.path_json(), "target": target.to_string() }),
            );
            self.send(
                MessageClass::Process,
                tx_id,
                target,
                Payload::Process { to: target, job: child },
            );
        }
        match tx.tx_type {
            TxType::Originating => self.on_root_mined(job.coordinator, tx_id),
            TxType::Subordinate => {
                let ordinal = subordinate_ordinals(&job.root)
                    .iter()
                    .position(|(p, _)| *p == job.path)
                    .expect("subordinate has an ordinal") as u64;
                let msg = ready_message(tx_id, chain, ordinal);
                let Some((sig, key_version)) = self.chain_sign(chain, &msg) else {
                    self.record(
                        "ready_signing_failed",
                        Some(node),
                        Some(tx_id),
                        json!({ "ordinal": ordinal }),
                    );
                    return;
                };
                let ready = ReadyMessage {
                    tx_id,
                    chain,
                    ordinal,
                    key_version,
                    sig,
                };
                self.record("ready_sent", Some(node), Some(tx_id), json!({ "ordinal": ordinal }));
                let to = job.coordinator;
                self.send(MessageClass::Ready, tx_id, to, Payload::Ready { to, msg: ready });
            }
            _ => {}
        }
    }

    /// Arm a timer for `tx_id` on every live validator of `chain` that has none.
    fn set_timers(&mut self, chain: ChainId, tx_id: CrosschainTxId, timeout_block: u64) {
        let base = self.coord.clock().timeout_tick(timeout_block);
        let jitter = self.config.params.timer_jitter;
        let seed = self.seed;
        let mut armed = Vec::new();
        let cs = self.chains.get_mut(&chain).unwrap();
        for v in cs.validators.iter_mut() {
            if v.is_down() || v.local_timers.contains_key(&tx_id) {
                continue;
            }
            let extra =
                rng_stream(seed, &format!("node/timer/{chain}/{}/{}", v.node_id, tx_id.0)).range_inclusive(0, jitter);
            let expiry = base + extra;
            v.local_timers.insert(tx_id, expiry);
            armed.push((
                NodeRef {
                    chain,
                    index: v.node_id,
                },
                expiry,
            ));
        }
        for (node, expiry) in armed {
            self.record("timer_set", Some(node), Some(tx_id), json!({ "expiry": expiry }));
            self.schedule(expiry, Payload::Timer { node, tx_id });
        }
    }

    fn on_root_mined(&mut self, coordinator: NodeRef, tx_id: CrosschainTxId) {
        if self.is_down(coordinator) {
            return;
        }
        if let Some(st) = self.coord_txs.get_mut(&tx_id) {
            st.root_mined = true;
        }
        self.try_commit(tx_id);
    }

    pub(crate) fn on_ready(&mut self, node: NodeRef, msg: ReadyMessage) {
        let tx_id = msg.tx_id;
        let expected = match self.coord_txs.get(&tx_id) {
            Some(st) if st.coordinator == node => st.expected.get(&(msg.ordinal as usize)).copied(),
            _ => None,
        };
        let ok = expected == Some(msg.chain)
            && self.verify_from(node.chain, msg.chain, msg.key_version, &msg.message(), &msg.sig);
        if !ok {
            self.record(
                "ready_rejected",
                Some(node),
                Some(tx_id),
                json!({ "from_chain": msg.chain.value(), "ordinal": msg.ordinal }),
            );
            return;
        }
        self.record(
            "ready_received",
            Some(node),
            Some(tx_id),
            json!({ "from_chain": msg.chain.value(), "ordinal": msg.ordinal }),
        );
        self.coord_txs
            .get_mut(&tx_id)
            .unwrap()
            .ready
            .insert(msg.ordinal as usize);
        self.try_commit(tx_id);
    }

    pub(crate) fn on_error(&mut self, node: NodeRef, tx_id: CrosschainTxId, from_chain: ChainId, reason: String) {
        let Some(st) = self.coord_txs.get(&tx_id) else {
            return;
        };
        if st.coordinator != node {
            return;
        }
        let i = st.submission;
        let undecided = st.decided.is_none();
        self.record(
            "error_received",
            Some(node),
            Some(tx_id),
            json!({ "from_chain": from_chain.value(), "reason": reason }),
        );
        self.submissions[i].first_error.get_or_insert(reason);
        if undecided {
            self.decide(tx_id, Decision::Ignore);
        }
    }

    fn try_commit(&mut self, tx_id: CrosschainTxId) {
        let Some(st) = self.coord_txs.get(&tx_id) else {
            return;
        };
        if st.decided.is_none() && st.root_mined && st.ready.len() == st.expected.len() {
            self.decide(tx_id, Decision::Commit);
        }
    }

    fn decide(&mut self, tx_id: CrosschainTxId, decision: Decision) {
        let node = self.coord_txs[&tx_id].coordinator;
        if self.crash_if(node, CrashPoint::AfterStartBeforeCommit, tx_id) {
            return;
        }
        self.coord_txs.get_mut(&tx_id).unwrap().decided = Some(decision);
        let msg = match decision {
            Decision::Commit => commit_message(tx_id),
            Decision::Ignore => ignore_message(tx_id),
        };
        let Some((sig, _)) = self.chain_sign(node.chain, &msg) else {
            self.record(
                "decision_signing_failed",
                Some(node),
                Some(tx_id),
                json!({ "decision": decision.name() }),
            );
            return;
        };
        self.record(
            "decision",
            Some(node),
            Some(tx_id),
            json!({ "decision": decision.name() }),
        );
        let delay = self.network_delay();
        self.schedule_in(
            delay,
            Payload::CoordSubmit {
                from: node,
                tx_id,
                action: CoordAction::Finish { decision, sig },
            },
        );
    }

    fn submit_signalling(&mut self, node: NodeRef, tx_id: CrosschainTxId, via: &str) {
        self.record("signalling_submitted", Some(node), Some(tx_id), json!({ "via": via }));
        let d = self.config.params.mining_delay;
        self.schedule_in(
            d,
            Payload::Mine {
                chain: node.chain,
                entry: PoolEntry::Signalling { node, tx_id },
            },
        );
    }

    pub(crate) fn on_signalling_request(&mut self, node: NodeRef, tx_id: CrosschainTxId) {
        if self.chains[&node.chain].resolved.contains(&tx_id) {
            self.record(
                "signalling_duplicate",
                Some(node),
                Some(tx_id),
                json!({ "via": "request" }),
            );
            return;
        }
        self.submit_signalling(node, tx_id, "request");
    }

    pub(crate) fn on_timer(&mut self, node: NodeRef, tx_id: CrosschainTxId) {
        if self.is_down(node) {
            return;
        }
        let now = self.now;
        let v = self.chains.get_mut(&node.chain).unwrap().validator_mut(node.index);
        if v.local_timers.get(&tx_id) != Some(&now) {
            return;
        }
        v.local_timers.remove(&tx_id);
        let status = self.coord.current_status(tx_id);
        self.record(
            "timer_fire",
            Some(node),
            Some(tx_id),
            json!({ "status": status_name(status) }),
        );
        self.submit_signalling(node, tx_id, "timer");
    }

    fn handle_signalling(&mut self, chain: ChainId, node: NodeRef, tx_id: CrosschainTxId) {
        let status = self.coord.current_status(tx_id);
        let cs = self.chains.get_mut(&chain).unwrap();
        cs.height += 1;
        if !status.is_terminal() {
            self.record_chain(
                "signalling_noop",
                chain,
                Some(tx_id),
                json!({ "status": status_name(status), "submitter": node.index }),
            );
            return;
        }
        if !cs.resolved.insert(tx_id) {
            self.record_chain(
                "signalling_duplicate",
                chain,
                Some(tx_id),
                json!({ "submitter": node.index }),
            );
            return;
        }
        let locked = cs.locks_by_tx.remove(&tx_id).unwrap_or_default();
        let commit = status == CoordStatus::Committed;
        let action = if commit { "commit" } else { "discard" };
        for &a in &locked {
            let c = cs.contracts.get_mut(a).expect("locked contract exists");
            if commit {
                c.unlock_commit().expect("locked by this tx");
            } else {
                c.unlock_discard().expect("locked by this tx");
            }
        }
        let mut cancelled = Vec::new();
        for v in cs.validators.iter_mut() {
            if !v.is_down() && v.local_timers.remove(&tx_id).is_some() {
                cancelled.push(NodeRef {
                    chain,
                    index: v.node_id,
                });
            }
        }
        self.record_chain(
            "signalling_mined",
            chain,
            Some(tx_id),
            json!({ "status": status_name(status), "submitter": node.index, "unlocked": locked.len() }),
        );
        for a in locked {
            self.record_chain(
                "unlock",
                chain,
                Some(tx_id),
                json!({ "contract": a.to_string(), "action": action }),
            );
        }
        for n in cancelled {
            self.record("timer_cancel", Some(n), Some(tx_id), json!({}));
        }
    }
}
