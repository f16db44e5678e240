//! Discover self-hosted git forges, mine their public repositories and
//! compare their collaboration metrics against a reference sample.

pub mod cloner;
pub mod crawler;
pub mod dedup;
pub mod extract;
pub mod fingerprint;
pub mod http;
pub mod jsonl;
pub mod label;
pub mod metrics;
pub mod pipeline;
pub mod stats;
