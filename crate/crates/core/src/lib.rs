//! Deterministic discrete-event simulator and protocol library for
//! comparing block propagation strategies on an account-based blockchain:
//! bodyless propagation with pre-packed bodies (BBP) against legacy full-block
//! (LBP), header-first (BHP) and compact-block (CBP) relaying, plus the
//! matching closed-form latency/throughput/fork models.

pub mod analytics;
pub mod chain;
pub mod execution;
pub mod mempool;
pub mod netsim;
pub mod protocols;
