//! Rationale-augmented automated essay scoring.
//!
//! The crate covers the non-training half of the pipeline: corpus ingestion
//! and splitting ([`corpus`]), LLM rationale generation ([`rationale`]),
//! agreement metrics ([`metrics`]), the numerical kernels behind stacking
//! ([`numerics`]), the seven ensemble strategies ([`ensemble`]) and the
//! command orchestration that writes result tables ([`harness`]).

pub mod corpus;
pub mod ensemble;
pub mod harness;
pub mod metrics;
pub mod numerics;
pub mod rationale;
pub mod seed;
pub mod synth;
