//! Request-outcome classification and tally arithmetic.
//!
//! Pure value types and pure functions, safe to call from any thread. The
//! flood engine owns live counters during a run and calls into this module at
//! aggregation time; the reporting layer re-derives the same numbers from the
//! run log as an independent cross-check.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Classification of one attempted request.
///
/// Exactly `ServerSuccess` counts toward the success column in strict mode;
/// every other variant is a failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeClass {
    ServerSuccess,
    ServerFailed,
    OverloadRejected,
    Timeout,
    ConnectError,
    ProtocolError,
}

impl OutcomeClass {
    pub const ALL: [OutcomeClass; 6] = [
        OutcomeClass::ServerSuccess,
        OutcomeClass::ServerFailed,
        OutcomeClass::OverloadRejected,
        OutcomeClass::Timeout,
        OutcomeClass::ConnectError,
        OutcomeClass::ProtocolError,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OutcomeClass::ServerSuccess => "ServerSuccess",
            OutcomeClass::ServerFailed => "ServerFailed",
            OutcomeClass::OverloadRejected => "OverloadRejected",
            OutcomeClass::Timeout => "Timeout",
            OutcomeClass::ConnectError => "ConnectError",
            OutcomeClass::ProtocolError => "ProtocolError",
        }
    }
}

impl fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Body token found in the first 4 KiB of a response, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BodyMarker {
    Success,
    Failed,
}

/// Transport-level failure reported by the client instead of a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportFailure {
    Timeout,
    Connect,
    Protocol,
}

/// How a recorded outcome is judged as success or failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Mode {
    /// Only a served page carrying the success token counts.
    #[default]
    Strict,
    /// A semantically correct answer counts, including a correct negative.
    Oracle,
}

/// One request's classification; the unit of the JSONL run log.
///
/// Field names below are the wire names used in the log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    /// Milliseconds since run start at which the attempt completed.
    #[serde(rename = "ts_ms")]
    pub timestamp_ms: u64,
    #[serde(rename = "worker")]
    pub worker_id: u32,
    pub outcome: OutcomeClass,
    #[serde(rename = "status")]
    pub http_status: Option<u16>,
    #[serde(rename = "marker")]
    pub body_marker: Option<BodyMarker>,
    pub latency_ms: u64,
    /// The course name sent with the request.
    pub payload: String,
}

/// Non-negative decimal with exactly two fractional digits.
///
/// Stored as hundredths so table cells and golden comparisons are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Fixed2(u64);

impl Fixed2 {
    pub const ZERO: Fixed2 = Fixed2(0);

    pub fn from_hundredths(h: u64) -> Fixed2 {
        Fixed2(h)
    }

    pub fn hundredths(self) -> u64 {
        self.0
    }

    /// Round `numer / denom` half-up to two decimals. `denom` must be > 0.
    pub fn ratio_round_half_up(numer: u64, denom: u64) -> Fixed2 {
        assert!(denom > 0, "ratio denominator must be positive");
        let n = numer as u128;
        let d = denom as u128;
        // hundredths = floor((n/d)*100 + 1/2) computed exactly on integers
        Fixed2(((200 * n + d) / (2 * d)) as u64)
    }
}

impl fmt::Display for Fixed2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

/// Failure-to-success ratio cell: finite two-decimal value or the
/// division-by-zero sentinel rendered as `inf`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioValue {
    Finite(Fixed2),
    Infinite,
}

impl RatioValue {
    pub fn is_finite(self) -> bool {
        matches!(self, RatioValue::Finite(_))
    }
}

impl fmt::Display for RatioValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RatioValue::Finite(v) => v.fmt(f),
            RatioValue::Infinite => f.write_str("inf"),
        }
    }
}

/// Aggregated success/failure counts for one timed run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunTally {
    pub success: u64,
    pub failure: u64,
    pub total: u64,
    pub ratio: RatioValue,
    pub failure_pct: Fixed2,
    pub duration_s: u32,
}

impl RunTally {
    /// Build a tally from raw counts, deriving total, ratio and percentage.
    pub fn from_counts(success: u64, failure: u64, duration_s: u32) -> RunTally {
        let total = success + failure;
        let ratio = if success > 0 {
            RatioValue::Finite(Fixed2::ratio_round_half_up(failure, success))
        } else if failure > 0 {
            RatioValue::Infinite
        } else {
            RatioValue::Finite(Fixed2::ZERO)
        };
        let failure_pct = if total > 0 {
            Fixed2::ratio_round_half_up(100 * failure, total)
        } else {
            Fixed2::ZERO
        };
        RunTally {
            success,
            failure,
            total,
            ratio,
            failure_pct,
            duration_s,
        }
    }
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("payload {payload:?} is not in the expected map")]
    UnknownPayload { payload: String },
    #[error("cannot merge tallies with durations {left}s and {right}s")]
    DurationMismatch { left: u32, right: u32 },
}

/// Map a raw response (or transport failure) to an outcome class.
///
/// Exactly one of `status` and `transport` must be present; a transport
/// failure dominates if a caller violates that.
pub fn classify_response(
    status: Option<u16>,
    marker: Option<BodyMarker>,
    transport: Option<TransportFailure>,
) -> OutcomeClass {
    debug_assert!(
        status.is_some() != transport.is_some(),
        "exactly one of status / transport_error must be present"
    );
    if let Some(failure) = transport {
        return match failure {
            TransportFailure::Timeout => OutcomeClass::Timeout,
            TransportFailure::Connect => OutcomeClass::ConnectError,
            TransportFailure::Protocol => OutcomeClass::ProtocolError,
        };
    }
    match status {
        Some(503) => OutcomeClass::OverloadRejected,
        Some(s) if (500..600).contains(&s) => OutcomeClass::ProtocolError,
        Some(s) if (200..300).contains(&s) => match marker {
            Some(BodyMarker::Success) => OutcomeClass::ServerSuccess,
            Some(BodyMarker::Failed) => OutcomeClass::ServerFailed,
            None => OutcomeClass::ProtocolError,
        },
        _ => OutcomeClass::ProtocolError,
    }
}

/// Decide whether an outcome counts as a success under the given mode.
pub fn is_success(outcome: OutcomeClass, mode: Mode, expected_present: bool) -> bool {
    match mode {
        Mode::Strict => outcome == OutcomeClass::ServerSuccess,
        Mode::Oracle => {
            (expected_present && outcome == OutcomeClass::ServerSuccess)
                || (!expected_present && outcome == OutcomeClass::ServerFailed)
        }
    }
}

/// Aggregate a run log into a tally. Pure and order-independent.
pub fn compute_tally(
    records: &[OutcomeRecord],
    mode: Mode,
    expected: &HashMap<String, bool>,
    duration_s: u32,
) -> Result<RunTally, MetricsError> {
    debug_assert!(duration_s > 0, "duration must be positive");
    let mut success = 0u64;
    let mut failure = 0u64;
    for record in records {
        let expected_present = match mode {
            Mode::Strict => false,
            Mode::Oracle => {
                *expected
                    .get(&record.payload)
                    .ok_or_else(|| MetricsError::UnknownPayload {
                        payload: record.payload.clone(),
                    })?
            }
        };
        if is_success(record.outcome, mode, expected_present) {
            success += 1;
        } else {
            failure += 1;
        }
    }
    Ok(RunTally::from_counts(success, failure, duration_s))
}

/// Combine two per-worker tallies. Counts add; derived fields are recomputed
/// from the merged counts, never averaged.
pub fn merge_tallies(a: &RunTally, b: &RunTally) -> Result<RunTally, MetricsError> {
    if a.duration_s != b.duration_s {
        return Err(MetricsError::DurationMismatch {
            left: a.duration_s,
            right: b.duration_s,
        });
    }
    Ok(RunTally::from_counts(
        a.success + b.success,
        a.failure + b.failure,
        a.duration_s,
    ))
}
