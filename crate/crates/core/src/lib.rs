//! Deterministic simulator for Web3 application architectures.

pub mod archetypes;
pub mod digest;
pub mod encoding;
pub mod identity;
pub mod tx;
pub mod vm;
pub mod storage;
pub mod consensus;
pub mod access;
pub mod atam;
pub mod demo;
