//! Federated fixed-confidence best-arm identification.
//!
//! A federation of `M` clients shares the same `K` arms, each client seeing its
//! own reward distribution per arm. Every client must learn its *local* best
//! arm, and the server must learn the *global* best arm (largest mean averaged
//! over clients), while paying one unit per arm pull and `C` units per scalar
//! sent on a client uplink.
//!
//! The crate provides:
//!
//! - [`instance`]: problem instances, ground truth, gaps, and reward sampling.
//! - [`schedule`]: communication schedules (every step, exponential, periodic,
//!   super-exponential).
//! - [`engine`]: the successive-elimination state machine with exact cost
//!   accounting and confidence-band instrumentation.
//! - [`bounds`]: closed-form sample-complexity and cost bounds.
//! - [`ingest`]: rating-table parsing and the MovieLens (hetrec) pipeline.
//! - [`harness`]: Monte-Carlo trial batches, aggregation, and acceptance checks.
//!
//! Arm and client indices are 0-based in the Rust API and 1-based in every
//! external format (CSV, JSON, text reports, CLI).

pub mod bounds;
pub mod engine;
pub mod error;
mod exact;
pub mod harness;
pub mod ingest;
pub mod instance;
pub mod schedule;
pub mod stream;
pub mod trace;


pub use engine::{run, Engine, RunConfig, RunResult, TraceLevel};
pub use bounds::BoundReport;
pub use error::{Error, Result};
pub use instance::{ProblemInstance, RewardKind};
pub use schedule::Schedule;
pub use stream::{RewardSource, RewardStream, StreamKey};
