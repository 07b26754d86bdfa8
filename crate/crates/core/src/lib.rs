//! Deterministic simulator for tournament-based dispute resolution over an
//! abstract UTXO ledger.

pub mod batch;
pub mod contest;
pub mod costmodel;
pub mod dag;
pub mod disable;
pub mod economics;
pub mod flex;
pub mod ledger;
pub mod runner;
pub mod scenario;
pub mod tc;
pub mod tournament;
