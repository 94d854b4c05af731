//! Post-hoc safety and liveness checks over a trace and final state.
//!
//! The checkers only read trace records and the final-state dump, so they
//! work equally on a fresh run and on files written by an earlier one.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::config::SimParams;
use super::trace::{FinalState, Trace, TraceRecord};
use crate::coord::CoordStatus;
use crate::txcore::CrosschainTxId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub pass: bool,
    pub violations: Vec<String>,
}

impl Verdict {
    fn from(violations: Vec<String>) -> Self {
        Verdict {
            pass: violations.is_empty(),
            violations,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.pass {
            return write!(f, "pass");
        }
        write!(f, "FAIL ({} violations)", self.violations.len())?;
        for v in &self.violations {
            write!(f, "\n  {v}")?;
        }
        Ok(())
    }
}

/// Ticks between a timer firing and the signalling transaction it submits
/// being mined.
pub fn slack(params: &SimParams) -> u64 {
    params.mining_delay
}

type Site = (u64, String);

fn site(r: &TraceRecord) -> Option<Site> {
    Some((r.chain?, r.detail_str("contract")?.to_string()))
}

fn staged(trace: &Trace) -> BTreeMap<u64, BTreeSet<Site>> {
    let mut out: BTreeMap<u64, BTreeSet<Site>> = BTreeMap::new();
    for r in trace.of_kind("stage") {
        if let (Some(tx), Some(s)) = (r.tx_id, site(r)) {
            out.entry(tx).or_default().insert(s);
        }
    }
    out
}

fn unlocks(trace: &Trace) -> BTreeMap<u64, Vec<(Site, String, u64)>> {
    let mut out: BTreeMap<u64, Vec<(Site, String, u64)>> = BTreeMap::new();
    for r in trace.of_kind("unlock") {
        if let (Some(tx), Some(s), Some(a)) = (r.tx_id, site(r), r.detail_str("action")) {
            out.entry(tx).or_default().push((s, a.to_string(), r.tick));
        }
    }
    out
}

fn resolved(state: &FinalState, tx: u64) -> CoordStatus {
    state
        .coordination
        .records
        .get(&CrosschainTxId(tx))
        .map(|r| r.resolved)
        .unwrap_or(CoordStatus::NotStarted)
}

fn timeout_blocks(trace: &Trace) -> BTreeMap<u64, u64> {
    trace
        .of_kind("coord_start")
        .filter(|r| r.detail_bool("accepted") == Some(true))
        .filter_map(|r| Some((r.tx_id?, r.detail_u64("timeout_block")?)))
        .collect()
}

/// Atomicity: every chain that staged state for a transaction resolves it the
/// same way, and that way matches the coordination contract.
pub fn check_safety(trace: &Trace, state: &FinalState) -> Verdict {
    let mut v = Vec::new();
    let staged = staged(trace);
    let unlocks = unlocks(trace);

    for (tx, list) in &unlocks {
        let actions: BTreeSet<&str> = list.iter().map(|(_, a, _)| a.as_str()).collect();
        if actions.len() > 1 {
            v.push(format!("tx {tx}: chains disagree, actions {actions:?}"));
        }
        let want = match resolved(state, *tx) {
            CoordStatus::Committed => Some("commit"),
            CoordStatus::Ignored => Some("discard"),
            _ => None,
        };
        for ((chain, contract), action, _) in list {
            if want != Some(action.as_str()) {
                v.push(format!(
                    "tx {tx}: chain {chain} contract {contract} did {action} but coordination says {:?}",
                    resolved(state, *tx)
                ));
            }
            if !staged.get(tx).is_some_and(|s| s.contains(&(*chain, contract.clone()))) {
                v.push(format!(
                    "tx {tx}: unlock of {contract} on chain {chain} without a stage"
                ));
            }
        }
    }
    for tx in staged.keys() {
        if resolved(state, *tx) == CoordStatus::NotStarted {
            v.push(format!("tx {tx}: state staged but never started"));
        }
    }

    // Coordination record transitions.
    let timeouts = timeout_blocks(trace);
    let mut history: BTreeMap<u64, Vec<&TraceRecord>> = BTreeMap::new();
    for r in &trace.records {
        if matches!(r.kind.as_str(), "coord_start" | "coord_commit" | "coord_ignore")
            && r.detail_bool("accepted") == Some(true)
        {
            if let Some(tx) = r.tx_id {
                history.entry(tx).or_default().push(r);
            }
        }
    }
    for (tx, hist) in &history {
        if hist[0].kind != "coord_start" {
            v.push(format!("tx {tx}: {} accepted before start", hist[0].kind));
        }
        let terminal: Vec<_> = hist.iter().filter(|r| r.kind != "coord_start").collect();
        if hist.iter().filter(|r| r.kind == "coord_start").count() > 1 {
            v.push(format!("tx {tx}: started twice"));
        }
        if terminal.len() > 1 {
            v.push(format!(
                "tx {tx}: terminal state changed ({} transitions)",
                terminal.len()
            ));
        }
        if let Some(last) = terminal.first() {
            if let (Some(block), Some(&timeout)) = (last.detail_u64("block"), timeouts.get(tx)) {
                if block > timeout {
                    v.push(format!(
                        "tx {tx}: {} accepted at block {block} past time-out {timeout}",
                        last.kind
                    ));
                }
            }
            let want = if last.kind == "coord_commit" {
                CoordStatus::Committed
            } else {
                CoordStatus::Ignored
            };
            let stored = state.coordination.records.get(&CrosschainTxId(*tx)).map(|r| r.stored);
            if stored != Some(want) {
                v.push(format!(
                    "tx {tx}: stored status {stored:?} but trace accepted {}",
                    last.kind
                ));
            }
        }
    }
    for (tx, r) in &state.coordination.records {
        if !history.contains_key(&tx.0) {
            v.push(format!("tx {}: record exists without an accepted start", tx.0));
        }
        if state.quiescent && r.resolved == CoordStatus::Started {
            v.push(format!("tx {}: still Started at quiescence", tx.0));
        }
    }
    Verdict::from(v)
}

/// Termination: quiescence, every lock released within the time-out bound,
/// every started transaction resolved, every live timer fired or cancelled.
pub fn check_liveness(trace: &Trace, state: &FinalState, params: &SimParams) -> Verdict {
    let mut v = Vec::new();
    if !state.quiescent {
        v.push(format!("no quiescence by tick {}", state.tick));
    }
    for (chain, contracts) in &state.chains {
        for (addr, c) in contracts {
            if let Some(owner) = c.lock_owner {
                v.push(format!("chain {chain} contract {addr} still locked by tx {}", owner.0));
            }
            if c.provisional.is_some() {
                v.push(format!("chain {chain} contract {addr} still has provisional state"));
            }
            if let Some(owner) = c.reserved_by {
                v.push(format!(
                    "chain {chain} contract {addr} still reserved by tx {}",
                    owner.0
                ));
            }
        }
    }
    for (tx, r) in &state.coordination.records {
        if r.resolved == CoordStatus::Started {
            v.push(format!("tx {} never resolved", tx.0));
        }
    }

    let unlocks = unlocks(trace);
    for (tx, sites) in staged(trace) {
        let done: BTreeSet<&Site> = unlocks
            .get(&tx)
            .map(|l| l.iter().map(|(s, _, _)| s).collect())
            .unwrap_or_default();
        for s in &sites {
            if !done.contains(s) {
                v.push(format!("tx {tx}: {} on chain {} never unlocked", s.1, s.0));
            }
        }
    }

    let crashed: BTreeSet<(u64, u32)> = trace
        .of_kind("crash")
        .filter_map(|r| Some((r.chain?, r.node?)))
        .collect();
    let mut timers: BTreeMap<(u64, u32, u64), i64> = BTreeMap::new();
    for r in &trace.records {
        let delta = match r.kind.as_str() {
            "timer_set" => 1,
            "timer_fire" | "timer_cancel" => -1,
            _ => continue,
        };
        if let (Some(c), Some(n), Some(tx)) = (r.chain, r.node, r.tx_id) {
            *timers.entry((c, n, tx)).or_default() += delta;
        }
    }
    for ((c, n, tx), open) in timers {
        if open != 0 && !crashed.contains(&(c, n)) {
            v.push(format!("timer for tx {tx} on node {c}/{n} neither fired nor cancelled"));
        }
    }

    let bound_extra = params.timer_jitter + slack(params);
    let timeouts = timeout_blocks(trace);
    for (tx, list) in &unlocks {
        let Some(&tb) = timeouts.get(tx) else { continue };
        let bound = (tb + 1) * params.ticks_per_block + bound_extra;
        for ((chain, contract), _, tick) in list {
            if *tick > bound {
                v.push(format!(
                    "tx {tx}: {contract} on chain {chain} unlocked at tick {tick}, bound {bound}"
                ));
            }
        }
    }
    Verdict::from(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::trace::{ContractState, CoordinationState, RecordState};
    use crate::txcore::{Address, ChainId};
    use serde_json::json;

    fn rec(tick: u64, chain: Option<u64>, node: Option<u32>, kind: &str, tx: u64, d: serde_json::Value) -> TraceRecord {
        TraceRecord {
            tick,
            seq: 0,
            chain,
            node,
            kind: kind.into(),
            tx_id: Some(tx),
            details: d,
        }
    }

    fn base(status: CoordStatus) -> (Trace, FinalState) {
        let trace = Trace {
            records: vec![
                rec(
                    1,
                    Some(100),
                    None,
                    "coord_start",
                    7,
                    json!({"accepted": true, "block": 0, "timeout_block": 10}),
                ),
                rec(5, Some(2), None, "stage", 7, json!({"contract": "0x000000000000000b"})),
                rec(6, Some(4), None, "stage", 7, json!({"contract": "0x000000000000000d"})),
                rec(9, Some(2), Some(1), "timer_set", 7, json!({"expiry": 120})),
                rec(
                    20,
                    Some(100),
                    None,
                    "coord_commit",
                    7,
                    json!({"accepted": true, "block": 2}),
                ),
                rec(
                    25,
                    Some(2),
                    None,
                    "unlock",
                    7,
                    json!({"contract": "0x000000000000000b", "action": "commit"}),
                ),
                rec(
                    26,
                    Some(4),
                    None,
                    "unlock",
                    7,
                    json!({"contract": "0x000000000000000d", "action": "commit"}),
                ),
                rec(26, Some(2), Some(1), "timer_cancel", 7, json!({})),
            ],
        };
        let mut records = BTreeMap::new();
        records.insert(
            CrosschainTxId(7),
            RecordState {
                stored: status,
                resolved: status,
                timeout_block: 10,
                originating_chain: ChainId::new(1),
            },
        );
        let mut chains = BTreeMap::new();
        let mut contracts = BTreeMap::new();
        contracts.insert(
            Address::from_u64(0xB),
            ContractState {
                lockable: true,
                storage: Default::default(),
                lock_owner: None,
                provisional: None,
                reserved_by: None,
            },
        );
        chains.insert(ChainId::new(2), contracts);
        let state = FinalState {
            tick: 200,
            quiescent: true,
            outside_assumptions: false,
            coordination: CoordinationState { block: 20, records },
            chains,
            submissions: vec![],
        };
        (trace, state)
    }

    #[test]
    fn consistent_commit_passes() {
        let (t, s) = base(CoordStatus::Committed);
        assert!(check_safety(&t, &s).pass, "{}", check_safety(&t, &s));
        assert!(check_liveness(&t, &s, &SimParams::default()).pass);
    }

    #[test]
    fn split_outcome_detected() {
        let (mut t, s) = base(CoordStatus::Committed);
        t.records[6].details["action"] = json!("discard");
        let v = check_safety(&t, &s);
        assert!(!v.pass);
        assert!(v.violations.iter().any(|m| m.contains("disagree")));
    }

    #[test]
    fn missing_unlock_detected() {
        let (mut t, s) = base(CoordStatus::Committed);
        t.records.remove(6);
        assert!(check_safety(&t, &s).pass);
        let v = check_liveness(&t, &s, &SimParams::default());
        assert!(!v.pass);
        assert!(v.violations[0].contains("never unlocked"));
    }

    #[test]
    fn held_lock_detected() {
        let (t, mut s) = base(CoordStatus::Committed);
        s.chains
            .get_mut(&ChainId::new(2))
            .unwrap()
            .get_mut(&Address::from_u64(0xB))
            .unwrap()
            .lock_owner = Some(CrosschainTxId(7));
        assert!(!check_liveness(&t, &s, &SimParams::default()).pass);
    }

    #[test]
    fn open_timer_and_late_unlock_detected() {
        let (mut t, s) = base(CoordStatus::Committed);
        t.records.pop();
        assert!(!check_liveness(&t, &s, &SimParams::default()).pass);
        let (mut t, s) = base(CoordStatus::Committed);
        t.records[5].tick = 10_000;
        let v = check_liveness(&t, &s, &SimParams::default());
        assert!(v.violations.iter().any(|m| m.contains("bound")));
    }

    #[test]
    fn started_at_quiescence_and_wrong_status_detected() {
        let (t, mut s) = base(CoordStatus::Committed);
        s.coordination.records.get_mut(&CrosschainTxId(7)).unwrap().resolved = CoordStatus::Started;
        assert!(!check_safety(&t, &s).pass);
        let (t, s) = base(CoordStatus::Ignored);
        assert!(!check_safety(&t, &s).pass);
    }

    #[test]
    fn second_terminal_transition_detected() {
        let (mut t, s) = base(CoordStatus::Committed);
        t.records.push(rec(
            30,
            Some(100),
            None,
            "coord_ignore",
            7,
            json!({"accepted": true, "block": 3}),
        ));
        let v = check_safety(&t, &s);
        assert!(v.violations.iter().any(|m| m.contains("terminal state changed")));
    }
}
