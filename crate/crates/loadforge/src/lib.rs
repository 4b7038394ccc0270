//! loadforge: an HTTP load benchmark built around a failure-to-success ratio.
//!
//! The crate bundles three pieces that are usually spread across separate
//! tools: a timed POST-flood engine with a shared connection pool, a
//! capacity-limited "course search" target server whose overload behavior is
//! deterministic and tunable, and a reporting layer that turns run logs into
//! ratio/totals tables and bar charts. Everything talks through a JSONL run
//! log with one record per attempted request.

pub mod cli;
pub mod flood;
pub mod metrics;
pub mod payload;
pub mod report;
pub mod target;
