//! Analysis-contract gate for panel-data causal analyses.
//!
//! The library enforces three conditions before an analysis may be labeled
//! causal: a method-data contract ([`contract`]), a data audit against that
//! contract ([`audit`]), and a digest-locked pre-commitment statement
//! ([`commitment`]). Every estimation run is recorded in a tamper-evident,
//! append-only fork ledger ([`ledger`]), and the final report ([`report`])
//! refuses the causal label unless every condition holds.

pub mod audit;
pub mod commitment;
pub mod contract;
pub mod criteria;
pub mod digest;
pub mod estimators;
pub mod kv;
pub mod ledger;
pub mod numerics;
pub mod panel;
pub mod report;
pub mod rng;
pub mod svg;
pub mod synthgen;
