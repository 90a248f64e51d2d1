//! Desk-scale streaming sequence-transduction laboratory.
//!
//! A fast/slow cascaded transducer for joint streaming recognition and
//! translation, a transducer-based streaming MT formulation, serialized
//! output training for two-speaker bilingual conversations, streaming beam
//! decoding with token finalization and latency accounting, and the metrics
//! to evaluate all of it — built on a minimal reverse-mode autodiff core and
//! verified against exact oracles on synthetic tasks.
//!
//! Start with the runnable programs in `examples/`, one per capability; the
//! `jstar` binary wraps the same library behind data-generation, training,
//! evaluation, decoding, and alignment subcommands.

pub mod numcore;
pub mod rnnt;
pub mod decode;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod sot;
