//! In-network aggregation laboratory for wireless sensor networks.
//!
//! The crate bundles:
//!
//! * [`keydist`]: random key predistribution, shared-key discovery and
//!   path-key establishment, with the closed-form connectivity and
//!   overhearing probabilities.
//! * [`cpda`]: cluster-based private data aggregation (original, efficient
//!   and hardened variants) over exact integers, with operation counters.
//! * [`attack`]: insider attacks that recover other members' private values
//!   from an original-CPDA transcript.
//! * [`ciagg`]: covariance-intersection max aggregation with threshold
//!   broadcast, two-hop suppression and 3-sigma malicious-node detection.
//! * [`netsim`]: a seeded, round-based network simulator that drives the
//!   protocols end to end and accounts messages, operations and energy.
//! * [`cli`]: configuration parsing and the experiment runner behind the
//!   `wsnagg` binary.

pub mod attack;
pub mod ciagg;
pub mod cli;
pub mod cpda;
pub mod graph;
pub mod keydist;
pub mod netsim;

pub use graph::{Adjacency, NodeId};
