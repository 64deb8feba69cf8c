//! Deterministic simulator for hierarchical, cost-aware, Byzantine-robust
//! federated learning across multi-cloud topologies.
//!
//! The crate is organized around the round pipeline: clients train locally
//! on non-IID shards ([`data`], [`model`]), malicious clients poison data or
//! updates ([`attack`]), per-cloud edge aggregators score contributions and
//! combine trusted updates ([`reputation`], [`aggregation`]), and a global
//! aggregator applies the cross-cloud step while a cost ledger tracks
//! intra- and cross-cloud transfer spend ([`economy`]). The
//! [`orchestrator`] wires the pieces into seeded, bitwise-reproducible
//! experiments configured through [`config`].

pub mod aggregation;
pub mod attack;
pub mod config;
pub mod data;
pub mod economy;
pub mod error;
pub mod linalg;
pub mod model;
pub mod orchestrator;
pub mod reputation;
pub mod seed;

pub use error::{Error, Result};
