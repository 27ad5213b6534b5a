//! Security protocol and simulator for distributed "train" analyses.
//!
//! An analysis train is a signed, envelope-encrypted bundle that visits a
//! fixed route of data-holding stations. Each station verifies the bundle's
//! provenance and execution history before running anything, executes the
//! analysis over its local records, signs and re-encrypts the accumulated
//! results, and hands the bundle back for routing. A central registry and
//! secret store are simulated — including a malicious registry that tampers
//! with images in transit — so the protocol's detection guarantees can be
//! exercised end to end.

pub mod analysis;
pub mod builder;
pub mod crypto;
pub mod fixtures;
pub mod model;
pub mod paillier;
pub mod query;
pub mod registry;
pub mod station;
