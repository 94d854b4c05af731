//! Atomic crosschain transactions over simulated permissioned blockchains.
//!
//! The crate is layered bottom-up: [`tsig`] (threshold signatures),
//! [`txcore`] (nested transaction model), [`contractvm`] (contract runtime
//! with locking), [`coord`] (coordination contract), [`node`] (validator and
//! coordinating-node protocol) and [`sim`] (deterministic scheduler, fault
//! injection and trace checkers). [`scenario`] holds the packaged scenarios.

pub mod contractvm;
pub mod coord;
pub mod node;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod tsig;
pub mod txcore;
