//! Distributed data-plane verification toolkit.
//!
//! The crate is organized as a stack: `hsa` provides the ternary header-space
//! algebra everything else computes with; `datamodel` describes topologies and
//! FIBs; `reqlang` parses requirements and compiles their path sets to DFAs;
//! `dvnet` builds the product DV-Network a requirement is verified on; `dvp`
//! runs the distributed verification protocol over it; `simharness` is the
//! deterministic event simulator the protocols execute in; `composer` merges
//! verified spaces from multiple control planes into one data plane; `fsd`
//! distributes per-device FIB state (local equivalence classes) so devices can
//! answer path queries; `scenario` reads the on-disk JSON formats and `bench`
//! generates synthetic networks for scale runs.

pub mod bench;
pub mod composer;
pub mod datamodel;
pub mod dvnet;
pub mod dvp;
pub mod fsd;
pub mod hsa;
pub mod reqlang;
pub mod scenario;
pub mod simharness;
