//! Core library for collaborative training by weight relay.
//!
//! `L` trainers jointly train one network by passing the full flattened
//! weight vector around — through a central relay server that only ever
//! sees ciphertexts (SNT), or peer to peer (FNT) — and never sharing
//! gradients or data. The crate bundles the pieces that make that work:
//!
//! - [`nn`]: the network engine (specs, forward/backward, losses, dropout)
//! - [`optim`]: SGD and Adam steps plus learning-rate schedules
//! - [`data`]: CSV/IDX ingestion, stratified splits, sharding, batching
//! - [`envelope`]: canonical weight serialization and the AES-128-CBC envelope
//! - [`protocol`]: server/trainer/peer state machines, transports, simulator
//! - [`analysis`]: centralized-SGD oracle, telescoping and collusion checks,
//!   the running-time model

pub mod analysis;
pub mod data;
pub mod envelope;
pub mod nn;
pub mod optim;
pub mod presets;
pub mod protocol;
pub mod seed;
