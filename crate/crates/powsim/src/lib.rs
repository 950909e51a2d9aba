//! Proof-of-work Sybil defense: the CCom and GMCom committee protocols, their
//! puzzle primitives, adversary and churn models, and a deterministic
//! discrete-event simulator with cost ledgers.

pub mod puzzle;
pub mod state;
pub mod ccom;
pub mod churn;
pub mod gmcom;
pub mod adversary;
pub mod metrics;
pub mod sim;
pub mod sybilcontrol;
pub mod config;
pub mod api;
