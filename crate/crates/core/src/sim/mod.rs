//! Deterministic discrete-event simulation of several chains, a coordination
//! chain and the validators that connect them.
//!
//! Events are delivered strictly in `(tick, seq)` order where `seq` is
//! assigned when the event is scheduled. Every random choice comes from a
//! labelled [`rng_stream`] of the run seed, so a `(config, seed)` pair fixes
//! the trace byte for byte.

pub mod checker;
pub mod config;
pub mod fault;
pub mod trace;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::contractvm::ContractSet;
use crate::coord::{CoordError, CoordStatus, CoordinationContract, KeyRegistryEntry};
use crate::node::{Job, PoolEntry, ReadyMessage, SignedViewResult, ValidatorNode};
use crate::rng::{rng_stream, SimRng};
use crate::scenario::contracts;
use crate::tsig::{self, KeyShareSet, ThresholdConfig, ThresholdSignature};
use crate::txcore::{Address, ChainId, CrosschainTransaction, CrosschainTxId};

pub use checker::{check_liveness, check_safety, Verdict};
pub use config::{
    ArgOverride, ChainConfig, ConfigError, ContractConfig, KeyRotation, MultichainNodeSpec, ScenarioConfig, SimParams,
    StorageOverride, SubmissionConfig,
};
pub use fault::{random_faults, ByzantineStyle, CrashPoint, FaultSpec, MessageClass};
pub use trace::{FinalState, SubmissionSummary, Trace, TraceRecord};

/// A validator: chain plus 1-based index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeRef {
    pub chain: ChainId,
    pub index: u32,
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.chain, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Decision {
    Commit,
    Ignore,
}

impl Decision {
    pub(crate) fn name(self) -> &'static str {
        match self {
            Decision::Commit => "commit",
            Decision::Ignore => "ignore",
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum CoordAction {
    Start {
        originating_chain: ChainId,
        timeout_block: u64,
        sig: ThresholdSignature,
    },
    Finish {
        decision: Decision,
        sig: ThresholdSignature,
    },
}

#[derive(Debug, Clone)]
pub(crate) enum Payload {
    Submit {
        submission: usize,
    },
    RotateKey {
        chain: ChainId,
    },
    CoordSubmit {
        from: NodeRef,
        tx_id: CrosschainTxId,
        action: CoordAction,
    },
    CoordOutcome {
        to: NodeRef,
        tx_id: CrosschainTxId,
        decision: Option<Decision>,
        result: Result<(), CoordError>,
    },
    Process {
        to: NodeRef,
        job: Job,
    },
    ViewReply {
        to: NodeRef,
        job: Job,
        result: Result<SignedViewResult, String>,
    },
    Mine {
        chain: ChainId,
        entry: PoolEntry,
    },
    Ready {
        to: NodeRef,
        msg: ReadyMessage,
    },
    ErrorReport {
        to: NodeRef,
        tx_id: CrosschainTxId,
        from_chain: ChainId,
        reason: String,
    },
    SignallingRequest {
        to: NodeRef,
        tx_id: CrosschainTxId,
    },
    Timer {
        node: NodeRef,
        tx_id: CrosschainTxId,
    },
}

/// Replicated state of one application chain plus its validators.
pub(crate) struct ChainState {
    pub cfg: ThresholdConfig,
    pub key_version: u64,
    pub public_key: tsig::GroupScalar,
    pub validators: Vec<ValidatorNode>,
    pub contracts: ContractSet,
    pub nonces: BTreeMap<Address, u64>,
    pub height: u64,
    /// Contracts this chain locked, per crosschain transaction.
    pub locks_by_tx: BTreeMap<CrosschainTxId, BTreeSet<Address>>,
    pub resolved: BTreeSet<CrosschainTxId>,
    /// Transactions waiting for their subordinate views, keyed by (tx, path).
    pub processing: BTreeMap<(CrosschainTxId, Vec<usize>), crate::node::Processing>,
    /// This chain's copy of other chains' registered keys.
    pub key_cache: BTreeMap<ChainId, KeyRegistryEntry>,
}

impl ChainState {
    pub(crate) fn validator(&self, index: u32) -> &ValidatorNode {
        &self.validators[(index - 1) as usize]
    }

    pub(crate) fn validator_mut(&mut self, index: u32) -> &mut ValidatorNode {
        &mut self.validators[(index - 1) as usize]
    }
}

/// Coordinating-node bookkeeping for one crosschain transaction.
pub(crate) struct CoordTx {
    pub root: Arc<CrosschainTransaction>,
    pub coordinator: NodeRef,
    pub owner: usize,
    pub submission: usize,
    /// Ordinal of each subordinate transaction to its chain.
    pub expected: BTreeMap<usize, ChainId>,
    pub ready: BTreeSet<usize>,
    pub root_mined: bool,
    pub decided: Option<Decision>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct SubmissionTrack {
    pub tx_id: Option<CrosschainTxId>,
    pub rejected: Option<String>,
    pub first_error: Option<String>,
}

pub(crate) struct LossPlan {
    pub rate: f64,
    pub classes: Vec<MessageClass>,
}

/// The whole simulated system.
pub struct World {
    pub(crate) config: ScenarioConfig,
    pub(crate) seed: u64,
    pub(crate) now: u64,
    next_seq: u64,
    pub(crate) queue: BTreeMap<(u64, u64), Payload>,
    pub(crate) trace: Vec<TraceRecord>,
    pub(crate) coord: CoordinationContract,
    clock_tick: u64,
    pub(crate) chains: BTreeMap<ChainId, ChainState>,
    pub(crate) coord_txs: BTreeMap<CrosschainTxId, CoordTx>,
    pub(crate) submissions: Vec<SubmissionTrack>,
    pub(crate) crash_plan: BTreeMap<NodeRef, CrashPoint>,
    pub(crate) loss: Vec<LossPlan>,
    pub(crate) delay: Option<(u64, u64)>,
    pub(crate) outside_assumptions: bool,
    net_rng: SimRng,
    max_ticks_exceeded: bool,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    pub final_state: FinalState,
}

impl RunOutput {
    pub fn outside_assumptions(&self) -> bool {
        self.final_state.outside_assumptions
    }
}

/// Run `config` to quiescence (or `max_ticks`) under `seed`.
pub fn run(config: &ScenarioConfig, seed: u64) -> Result<RunOutput, ConfigError> {
    let mut world = World::new(config.clone(), seed)?;
    world.run_to_end();
    Ok(world.finish())
}

/// [`run`] with extra faults on top of those in the config.
pub fn run_with_faults(config: &ScenarioConfig, seed: u64, faults: &[FaultSpec]) -> Result<RunOutput, ConfigError> {
    let mut cfg = config.clone();
    cfg.faults.extend(faults.iter().cloned());
    run(&cfg, seed)
}

impl World {
    pub fn new(config: ScenarioConfig, seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        let p = config.params;
        let mut coord = CoordinationContract::new(
            config.coordination.chain,
            config.coordination.contract,
            p.ticks_per_block,
        );
        let mut chains = BTreeMap::new();
        for c in &config.chains {
            let cfg =
                ThresholdConfig::new(c.validators, c.threshold).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            let keys = genesis_keys(seed, c.id, 1, cfg);
            coord
                .register_key(KeyRegistryEntry {
                    chain: c.id,
                    version: 1,
                    public_key: keys.0,
                    threshold_cfg: cfg,
                })
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            let validators = keys
                .1
                .iter()
                .map(|share| ValidatorNode::new(c.id, share.index, *share))
                .collect();
            chains.insert(
                c.id,
                ChainState {
                    cfg,
                    key_version: 1,
                    public_key: keys.0,
                    validators,
                    contracts: ContractSet::new(),
                    nonces: BTreeMap::new(),
                    height: 0,
                    locks_by_tx: BTreeMap::new(),
                    resolved: BTreeSet::new(),
                    processing: BTreeMap::new(),
                    key_cache: BTreeMap::new(),
                },
            );
        }
        let genesis: BTreeMap<ChainId, KeyRegistryEntry> = chains
            .keys()
            .map(|&id| (id, *coord.registry().latest(id).expect("registered")))
            .collect();
        for cs in chains.values_mut() {
            cs.key_cache = genesis.clone();
        }
        for c in &config.contracts {
            let code = contracts::lookup(&c.code).ok_or_else(|| ConfigError::UnknownCode(c.code.clone()))?;
            let cs = chains.get_mut(&c.chain).expect("validated");
            let inst = cs
                .contracts
                .deploy(c.address, c.lockable, code)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            inst.committed_storage = c.storage.clone();
        }

        let mut world = World {
            seed,
            now: 0,
            next_seq: 0,
            queue: BTreeMap::new(),
            trace: Vec::new(),
            coord,
            clock_tick: 0,
            chains,
            coord_txs: BTreeMap::new(),
            submissions: vec![SubmissionTrack::default(); config.submissions.len()],
            crash_plan: BTreeMap::new(),
            loss: Vec::new(),
            delay: None,
            outside_assumptions: false,
            net_rng: rng_stream(seed, "sim/network"),
            max_ticks_exceeded: false,
            config,
        };
        world.apply_faults()?;
        for (i, s) in world.config.submissions.clone().iter().enumerate() {
            world.schedule(s.at_tick, Payload::Submit { submission: i });
        }
        for r in world.config.key_rotations.clone() {
            world.schedule(r.at_tick, Payload::RotateKey { chain: r.chain });
        }
        Ok(world)
    }

    fn apply_faults(&mut self) -> Result<(), ConfigError> {
        let mut byzantine: BTreeMap<ChainId, u32> = BTreeMap::new();
        for f in self.config.faults.clone() {
            match f {
                FaultSpec::CrashCoordinator { point, chain, node } => {
                    let site = self.crash_site(point, chain, node)?;
                    self.crash_plan.insert(site, point);
                }
                FaultSpec::ByzantineValidators { chain, count, style } => {
                    let members: BTreeSet<u32> = self
                        .config
                        .multichain_nodes
                        .iter()
                        .filter_map(|m| m.members.get(&chain).copied())
                        .collect();
                    let cs = self.chains.get_mut(&chain).expect("validated");
                    // Highest indices first, sparing multichain members.
                    let mut left = count;
                    for v in cs.validators.iter_mut().rev() {
                        if left == 0 {
                            break;
                        }
                        if v.byzantine.is_none() && !members.contains(&v.node_id) {
                            v.byzantine = Some(style);
                            left -= 1;
                        }
                    }
                    for v in cs.validators.iter_mut().rev() {
                        if left == 0 {
                            break;
                        }
                        if v.byzantine.is_none() {
                            v.byzantine = Some(style);
                            left -= 1;
                        }
                    }
                    *byzantine.entry(chain).or_default() += count;
                }
                FaultSpec::MessageLoss { rate, classes } => self.loss.push(LossPlan { rate, classes }),
                FaultSpec::MessageDelay { min, max } => {
                    let (lo, hi) = self.delay.unwrap_or((0, 0));
                    self.delay = Some((lo + min, hi + max));
                }
            }
        }
        for (chain, count) in byzantine {
            if count >= self.chains[&chain].cfg.m() {
                self.outside_assumptions = true;
            }
        }
        Ok(())
    }

    fn crash_site(&self, point: CrashPoint, chain: Option<ChainId>, node: Option<u32>) -> Result<NodeRef, ConfigError> {
        let first = self.config.submissions.first();
        let chain = match chain {
            Some(c) => c,
            None => first
                .map(|s| s.chain)
                .ok_or_else(|| ConfigError::UnknownSite("no submission".into()))?,
        };
        let index = match node {
            Some(n) => n,
            None => {
                let owner = first
                    .and_then(|s| self.config.owner(&s.via))
                    .ok_or_else(|| ConfigError::UnknownSite(format!("{} on chain {chain}", point.name())))?;
                *owner.members.get(&chain).ok_or_else(|| {
                    ConfigError::UnknownSite(format!("{} has no member on chain {chain}", owner.owner))
                })?
            }
        };
        Ok(NodeRef { chain, index })
    }

    pub(crate) fn schedule(&mut self, tick: u64, payload: Payload) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.insert((tick, seq), payload);
    }

    pub(crate) fn schedule_in(&mut self, delay: u64, payload: Payload) {
        self.schedule(self.now + delay, payload);
    }

    /// Schedule a network message, applying loss and delay faults.
    pub(crate) fn send(&mut self, class: MessageClass, tx_id: CrosschainTxId, to: NodeRef, payload: Payload) {
        for i in 0..self.loss.len() {
            let plan = &self.loss[i];
            if !plan.classes.is_empty() && !plan.classes.contains(&class) {
                continue;
            }
            let rate = plan.rate;
            if self.net_rng.chance(rate) {
                self.record("message_lost", Some(to), Some(tx_id), json!({ "class": class.name() }));
                return;
            }
        }
        let delay = self.network_delay();
        self.schedule_in(delay, payload);
    }

    /// Base latency plus any injected extra delay.
    pub(crate) fn network_delay(&mut self) -> u64 {
        let extra = match self.delay {
            Some((lo, hi)) => self.net_rng.range_inclusive(lo, hi),
            None => 0,
        };
        self.config.params.message_latency + extra
    }

    pub(crate) fn record(&mut self, kind: &str, node: Option<NodeRef>, tx_id: Option<CrosschainTxId>, details: Value) {
        let seq = self.trace.len() as u64;
        self.trace.push(TraceRecord {
            tick: self.now,
            seq,
            chain: node.map(|n| n.chain.value()),
            node: node.map(|n| n.index),
            kind: kind.to_string(),
            tx_id: tx_id.map(|t| t.0),
            details,
        });
    }

    pub(crate) fn record_chain(&mut self, kind: &str, chain: ChainId, tx_id: Option<CrosschainTxId>, details: Value) {
        let seq = self.trace.len() as u64;
        self.trace.push(TraceRecord {
            tick: self.now,
            seq,
            chain: Some(chain.value()),
            node: None,
            kind: kind.to_string(),
            tx_id: tx_id.map(|t| t.0),
            details,
        });
    }

    pub(crate) fn is_down(&self, node: NodeRef) -> bool {
        self.chains
            .get(&node.chain)
            .map(|c| c.validator(node.index).is_down())
            .unwrap_or(true)
    }

    /// Crash `node` if the fault plan puts a crash at `point` for it.
    pub(crate) fn crash_if(&mut self, node: NodeRef, point: CrashPoint, tx_id: CrosschainTxId) -> bool {
        if self.crash_plan.get(&node) != Some(&point) {
            return false;
        }
        let cs = self.chains.get_mut(&node.chain).expect("known chain");
        cs.validator_mut(node.index).crashed = true;
        self.record("crash", Some(node), Some(tx_id), json!({ "point": point.name() }));
        true
    }

    fn rotate_key(&mut self, chain: ChainId) {
        let cs = self.chains.get_mut(&chain).expect("validated");
        let version = cs.key_version + 1;
        let (pk, shares) = genesis_keys(self.seed, chain, version, cs.cfg);
        cs.key_version = version;
        cs.public_key = pk;
        for (v, s) in cs.validators.iter_mut().zip(shares.iter()) {
            v.key_share = *s;
        }
        let cfg = cs.cfg;
        self.coord
            .register_key(KeyRegistryEntry {
                chain,
                version,
                public_key: pk,
                threshold_cfg: cfg,
            })
            .expect("versions increase");
        // The rotating chain knows its own new key; others find out lazily.
        let entry = *self.coord.registry().latest(chain).expect("just registered");
        self.chains.get_mut(&chain).unwrap().key_cache.insert(chain, entry);
        self.record_chain("key_rotated", chain, None, json!({ "version": version }));
    }

    fn sync_clock(&mut self) {
        if self.now > self.clock_tick {
            self.coord.advance_clock(self.now - self.clock_tick);
            self.clock_tick = self.now;
        }
    }

    pub fn step(&mut self) -> bool {
        let Some(((tick, _), payload)) = self.queue.pop_first() else {
            return false;
        };
        if tick > self.config.params.max_ticks {
            self.queue.clear();
            self.max_ticks_exceeded = true;
            return false;
        }
        self.now = tick;
        self.sync_clock();
        self.dispatch(payload);
        true
    }

    fn dispatch(&mut self, payload: Payload) {
        match payload {
            Payload::Submit { submission } => self.on_submit(submission),
            Payload::RotateKey { chain } => self.rotate_key(chain),
            Payload::CoordSubmit { from, tx_id, action } => self.on_coord_submit(from, tx_id, action),
            Payload::CoordOutcome {
                to,
                tx_id,
                decision,
                result,
            } => self.on_coord_outcome(to, tx_id, decision, result),
            Payload::Process { to, job } => {
                if self.deliverable(to, job.tx_id(), "process") {
                    self.on_process(to, job);
                }
            }
            Payload::ViewReply { to, job, result } => {
                if self.deliverable(to, job.tx_id(), "view_reply") {
                    self.on_view_reply(to, job, result);
                }
            }
            Payload::Mine { chain, entry } => self.on_mine(chain, entry),
            Payload::Ready { to, msg } => {
                if self.deliverable(to, msg.tx_id, "ready") {
                    self.on_ready(to, msg);
                }
            }
            Payload::ErrorReport {
                to,
                tx_id,
                from_chain,
                reason,
            } => {
                if self.deliverable(to, tx_id, "error_report") {
                    self.on_error(to, tx_id, from_chain, reason);
                }
            }
            Payload::SignallingRequest { to, tx_id } => {
                if self.deliverable(to, tx_id, "signalling_request") {
                    self.on_signalling_request(to, tx_id);
                }
            }
            Payload::Timer { node, tx_id } => self.on_timer(node, tx_id),
        }
    }

    fn deliverable(&mut self, to: NodeRef, tx_id: CrosschainTxId, what: &str) -> bool {
        if self.is_down(to) {
            self.record(
                "dropped_at_down_node",
                Some(to),
                Some(tx_id),
                json!({ "message": what }),
            );
            return false;
        }
        true
    }

    pub fn run_to_end(&mut self) {
        while self.step() {}
        let reason = if self.max_ticks_exceeded {
            "max_ticks"
        } else {
            "quiescence"
        };
        self.record("run_end", None, None, json!({ "reason": reason }));
    }

    pub fn finish(self) -> RunOutput {
        let block = self.coord.current_block();
        let records = self
            .coord
            .records()
            .map(|r| {
                (
                    r.tx_id,
                    trace::RecordState {
                        stored: r.status,
                        resolved: self.coord.status(r.tx_id, block),
                        timeout_block: r.timeout_block,
                        originating_chain: r.originating_chain,
                    },
                )
            })
            .collect();
        let chains = self
            .chains
            .iter()
            .map(|(&id, cs)| {
                let contracts = cs
                    .contracts
                    .iter()
                    .map(|c| {
                        (
                            c.address,
                            trace::ContractState {
                                lockable: c.lockable,
                                storage: c.committed_storage.clone(),
                                lock_owner: c.lock_owner(),
                                provisional: c.provisional_overlay().cloned(),
                                reserved_by: cs.contracts.reservation(c.address),
                            },
                        )
                    })
                    .collect();
                (id, contracts)
            })
            .collect();
        let submissions = self
            .config
            .submissions
            .iter()
            .zip(&self.submissions)
            .map(|(s, t)| SubmissionSummary {
                label: s.label.clone(),
                tx_id: t.tx_id,
                status: t
                    .tx_id
                    .map(|id| self.coord.status(id, block))
                    .unwrap_or(CoordStatus::NotStarted),
                reason: t.rejected.clone().or_else(|| t.first_error.clone()),
            })
            .collect();
        let final_state = FinalState {
            tick: self.now,
            quiescent: !self.max_ticks_exceeded,
            outside_assumptions: self.outside_assumptions,
            coordination: trace::CoordinationState { block, records },
            chains,
            submissions,
        };
        RunOutput {
            trace: Trace { records: self.trace },
            final_state,
        }
    }

    pub(crate) fn member(&self, owner: usize, chain: ChainId) -> Option<NodeRef> {
        self.config.multichain_nodes[owner]
            .members
            .get(&chain)
            .map(|&index| NodeRef { chain, index })
    }
}

/// Deterministic dealer keys for `(chain, version)`.
fn genesis_keys(seed: u64, chain: ChainId, version: u64, cfg: ThresholdConfig) -> (tsig::GroupScalar, KeyShareSet) {
    let key_seed = rng_stream(seed, &format!("sim/keygen/{chain}/{version}")).next_u64();
    let out = tsig::dealer_keygen(cfg, key_seed).expect("validated threshold");
    (out.public_key, out.shares)
}
