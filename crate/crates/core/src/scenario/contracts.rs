//! Contract bodies referenced by name from scenario configs.
//!
//! Bodies are plain functions, so anything deployment-specific (which chain
//! and address to call, authorised callers, router slot lists) lives in the
//! contract's own storage. Crosschain targets are stored as a pair of slots:
//! chain id at `k`, address at `k + 1`.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use crate::contractvm::{ContractCode, Env, Fault};
use crate::txcore::{Address, ChainId};

/// First target slot pair.
pub const TARGET_0: u64 = 100;
/// Second target slot pair.
pub const TARGET_1: u64 = 102;
/// Third target slot pair.
pub const TARGET_2: u64 = 104;
/// Payee account used by agents that pay through a token router.
pub const PAYEE: u64 = 106;
/// Router slot count; slot addresses follow from `ROUTER_COUNT + 1`.
pub const ROUTER_COUNT: u64 = 10;
/// Authorised `from_address`, `from_chain` and originating chain.
pub const AUTH_FROM_ADDRESS: u64 = 101;
pub const AUTH_FROM_CHAIN: u64 = 102;
pub const AUTH_ORIGIN_CHAIN: u64 = 103;

type Ret = Result<Option<u64>, Fault>;

fn target(env: &mut Env<'_, '_>, slot: u64) -> Result<(ChainId, Address), Fault> {
    let chain = ChainId::try_new(env.load(slot)).ok_or_else(|| Fault::contract("target chain not configured"))?;
    Ok((chain, Address::from_u64(env.load(slot + 1))))
}

fn func_a(env: &mut Env<'_, '_>, args: &[u64]) -> Ret {
    let (chain, to) = target(env, TARGET_0)?;
    env.crosschain_transaction(chain, to, "funcB", &[args[0]])?;
    env.store(1, args[0]);
    Ok(None)
}

fn func_b(env: &mut Env<'_, '_>, args: &[u64]) -> Ret {
    if env.load(1) != 1 {
        let (vc, va) = target(env, TARGET_0)?;
        let v = env.crosschain_view(vc, va, "funcC", &[args[0]])?;
        let state2 = env.load(2);
        let (tc, ta) = target(env, TARGET_1)?;
        env.crosschain_transaction(tc, ta, "funcD", &[v + state2])?;
    }
    env.store(3, args[0]);
    Ok(None)
}

fn func_c(env: &mut Env<'_, '_>, args: &[u64]) -> Ret {
    Ok(Some(args[0] + env.load(1)))
}

fn func_d(env: &mut Env<'_, '_>, args: &[u64]) -> Ret {
    env.store(1, args[0]);
    Ok(None)
}

/// `book(customer, room, seat)`: reserve a hotel room and a train seat.
fn agent_book(env: &mut Env<'_, '_>, args: &[u64]) -> Ret {
    let (customer, room, seat) = (args[0], args[1], args[2]);
    let (hc, ha) = target(env, TARGET_0)?;
    env.crosschain_transaction(hc, ha, "book", &[room, customer])?;
    let (tc, ta) = target(env, TARGET_1)?;
    env.crosschain_transaction(tc, ta, "book", &[seat, customer])?;
    let n = env.load(1);
    env.store(1, n + 1);
    Ok(None)
}

/// `book(item, customer)` on a contract holding many items.
fn reservation_book(env: &mut Env<'_, '_>, args: &[u64]) -> Ret {
    let (item, customer) = (args[0], args[1]);
    let holder = env.load(item);
    env.require(holder == 0, "item already booked")?;
    env.store(item, customer);
    Ok(None)
}

/// A single bookable item: key 1 holds the customer, 0 when free.
fn slot_available(env: &mut Env<'_, '_>, _: &[u64]) -> Ret {
    Ok(Some(u64::from(env.load(1) == 0)))
}

fn slot_reserve(env: &mut Env<'_, '_>, args: &[u64]) -> Ret {
    let holder = env.load(1);
    env.require(holder == 0, "slot taken")?;
    env.store(1, args[0]);
    Ok(None)
}

fn router_slots(env: &mut Env<'_, '_>) -> Vec<Address> {
    let n = env.load(ROUTER_COUNT);
    (0..n)
        .map(|i| Address::from_u64(env.load(ROUTER_COUNT + 1 + i)))
        .collect()
}

/// `book(customer)`: reserve the first unlocked, free item contract.
fn router_book(env: &mut Env<'_, '_>, args: &[u64]) -> Ret {
    for slot in router_slots(env) {
        if env.is_locked(slot) {
            continue;
        }
        if env.call_local(slot, "available", &[])? == Some(1) {
            env.call_local(slot, "reserve", &[args[0]])?;
            return Ok(None);
        }
    }
    Err(Fault::contract("no free item"))
}

/// Token balances keyed by account number.
fn token_balance(env: &mut Env<'_, '_>, args: &[u64]) -> Ret {
    Ok(Some(env.load(args[0])))
}

fn token_transfer(env: &mut Env<'_, '_>, args: &[u64]) -> Ret {
    let (from, to, amount) = (args[0], args[1], args[2]);
    let have = env.load(from);
    env.require(have >= amount, "insufficient balance")?;
    env.store(from, have - amount);
    let theirs = env.load(to);
    env.store(to, theirs + amount);
    Ok(None)
}

/// `pay(from, to, amount)` through the first unlocked slot with enough balance.
fn token_router_pay(env: &mut Env<'_, '_>, args: &[u64]) -> Ret {
    let (from, amount) = (args[0], args[2]);
    for slot in router_slots(env) {
        if env.is_locked(slot) {
            continue;
        }
        if env.call_local(slot, "balance", &[from])?.unwrap_or(0) >= amount {
            env.call_local(slot, "transfer", args)?;
            return Ok(None);
        }
    }
    Err(Fault::contract("no funded payment slot"))
}

/// `book(customer, payer, amount)` through hotel, train and token routers.
fn router_agent_book(env: &mut Env<'_, '_>, args: &[u64]) -> Ret {
    let (customer, payer, amount) = (args[0], args[1], args[2]);
    let (hc, ha) = target(env, TARGET_0)?;
    env.crosschain_transaction(hc, ha, "book", &[customer])?;
    let (tc, ta) = target(env, TARGET_1)?;
    env.crosschain_transaction(tc, ta, "book", &[customer])?;
    let (pc, pa) = target(env, TARGET_2)?;
    let payee = env.load(PAYEE);
    env.crosschain_transaction(pc, pa, "pay", &[payer, payee, amount])?;
    let n = env.load(1);
    env.store(1, n + 1);
    Ok(None)
}

fn bouncer_start(env: &mut Env<'_, '_>, _: &[u64]) -> Ret {
    let (chain, to) = target(env, TARGET_0)?;
    env.crosschain_transaction(chain, to, "bounce", &[])?;
    env.store(1, 1);
    Ok(None)
}

fn bouncer_finish(env: &mut Env<'_, '_>, _: &[u64]) -> Ret {
    env.store(2, 1);
    Ok(None)
}

fn relay_bounce(env: &mut Env<'_, '_>, _: &[u64]) -> Ret {
    let (chain, to) = target(env, TARGET_0)?;
    env.crosschain_transaction(chain, to, "finish", &[])?;
    env.store(1, 1);
    Ok(None)
}

fn auth_call(env: &mut Env<'_, '_>, args: &[u64]) -> Ret {
    let (chain, to) = target(env, TARGET_0)?;
    env.crosschain_transaction(chain, to, "act", &[args[0]])?;
    env.store(1, args[0]);
    Ok(None)
}

/// Only callable from one contract on one chain, within transactions that
/// originate on one chain.
fn guarded_act(env: &mut Env<'_, '_>, args: &[u64]) -> Ret {
    let ctx = env.context();
    let addr = env.load(AUTH_FROM_ADDRESS);
    let chain = env.load(AUTH_FROM_CHAIN);
    let origin = env.load(AUTH_ORIGIN_CHAIN);
    env.require(ctx.from_address.to_u64() == addr, "unauthorised from address")?;
    env.require(ctx.from_chain.value() == chain, "unauthorised from chain")?;
    env.require(
        ctx.originating_chain.value() == origin,
        "unauthorised originating chain",
    )?;
    env.store(1, args[0]);
    Ok(None)
}

fn library() -> &'static BTreeMap<String, Arc<ContractCode>> {
    static LIB: OnceLock<BTreeMap<String, Arc<ContractCode>>> = OnceLock::new();
    LIB.get_or_init(|| {
        let codes = [
            ContractCode::new("ConA").with("funcA", 1, func_a),
            ContractCode::new("ConB").with("funcB", 1, func_b),
            ContractCode::new("ConC").with("funcC", 1, func_c),
            ContractCode::new("ConD").with("funcD", 1, func_d),
            ContractCode::new("TravelAgent").with("book", 3, agent_book),
            ContractCode::new("Reservation").with("book", 2, reservation_book),
            ContractCode::new("ItemSlot")
                .with("available", 0, slot_available)
                .with("reserve", 1, slot_reserve),
            ContractCode::new("BookingRouter").with("book", 1, router_book),
            ContractCode::new("TokenSlot")
                .with("balance", 1, token_balance)
                .with("transfer", 3, token_transfer),
            ContractCode::new("TokenRouter").with("pay", 3, token_router_pay),
            ContractCode::new("RouterAgent").with("book", 3, router_agent_book),
            ContractCode::new("Bouncer")
                .with("start", 0, bouncer_start)
                .with("finish", 0, bouncer_finish),
            ContractCode::new("Relay").with("bounce", 0, relay_bounce),
            ContractCode::new("AuthCaller").with("call", 1, auth_call),
            ContractCode::new("Guarded").with("act", 1, guarded_act),
        ];
        codes.into_iter().map(|c| (c.name.clone(), Arc::new(c))).collect()
    })
}

pub fn lookup(name: &str) -> Option<Arc<ContractCode>> {
    library().get(name).cloned()
}

pub fn names() -> impl Iterator<Item = &'static str> {
    library().keys().map(String::as_str)
}
