//! Naive single-pass recount over a JSONL run log.
//!
//! This is the brute-force cross-check for the engine's streaming
//! aggregation, so it deliberately shares no counting or rounding code with
//! the metrics module: outcomes are matched as strings and the two-decimal
//! fields are produced by long division.

use std::collections::HashMap;
use std::path::Path;

use crate::metrics::{Fixed2, Mode, RatioValue, RunTally};

use super::ReportError;

const OUTCOME_NAMES: [&str; 6] = [
    "ServerSuccess",
    "ServerFailed",
    "OverloadRejected",
    "Timeout",
    "ConnectError",
    "ProtocolError",
];

/// Exact round-half-up of `numer/denom` to hundredths via long division.
fn long_division_hundredths(numer: u64, denom: u64) -> Fixed2 {
    let whole = numer / denom;
    let mut rem = numer % denom;
    rem *= 10;
    let tenths = rem / denom;
    rem %= denom;
    rem *= 10;
    let hundredths_digit = rem / denom;
    rem %= denom;
    let mut hundredths = whole * 100 + tenths * 10 + hundredths_digit;
    if rem * 2 >= denom {
        hundredths += 1;
    }
    Fixed2::from_hundredths(hundredths)
}

fn tally_from_recount(success: u64, failure: u64, duration_s: u32) -> RunTally {
    let total = success + failure;
    let ratio = if success > 0 {
        RatioValue::Finite(long_division_hundredths(failure, success))
    } else if failure > 0 {
        RatioValue::Infinite
    } else {
        RatioValue::Finite(Fixed2::ZERO)
    };
    let failure_pct = if total > 0 {
        long_division_hundredths(failure * 100, total)
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

struct LogLine {
    ts_ms: u64,
    outcome: String,
    payload: String,
}

fn parse_line(path: &Path, line_no: u64, raw: &str) -> Result<LogLine, ReportError> {
    let err = |message: String| ReportError::Parse {
        path: path.to_path_buf(),
        line: line_no,
        message,
    };
    let value: serde_json::Value =
        serde_json::from_str(raw).map_err(|e| err(format!("invalid JSON: {e}")))?;
    let ts_ms = value
        .get("ts_ms")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| err("missing integer field `ts_ms`".into()))?;
    let outcome = value
        .get("outcome")
        .and_then(|v| v.as_str())
        .ok_or_else(|| err("missing string field `outcome`".into()))?;
    if !OUTCOME_NAMES.contains(&outcome) {
        return Err(err(format!("unknown outcome {outcome:?}")));
    }
    let payload = value
        .get("payload")
        .and_then(|v| v.as_str())
        .ok_or_else(|| err("missing string field `payload`".into()))?;
    Ok(LogLine {
        ts_ms,
        outcome: outcome.to_string(),
        payload: payload.to_string(),
    })
}

/// Recount a run log from scratch. Used as the oracle against the engine's
/// own tally; any divergence between the two is a bug in one of them.
pub fn recount_log(
    path: &Path,
    mode: Mode,
    expected: &HashMap<String, bool>,
    duration_s: u32,
) -> Result<RunTally, ReportError> {
    let raw = std::fs::read_to_string(path)?;
    let mut success = 0u64;
    let mut failure = 0u64;
    for (idx, line) in raw.lines().enumerate() {
        let parsed = parse_line(path, idx as u64 + 1, line)?;
        let counted_success = match mode {
            Mode::Strict => parsed.outcome == "ServerSuccess",
            Mode::Oracle => {
                let present = *expected.get(&parsed.payload).ok_or_else(|| {
                    ReportError::UnknownPayload {
                        payload: parsed.payload.clone(),
                    }
                })?;
                if present {
                    parsed.outcome == "ServerSuccess"
                } else {
                    parsed.outcome == "ServerFailed"
                }
            }
        };
        if counted_success {
            success += 1;
        } else {
            failure += 1;
        }
    }
    Ok(tally_from_recount(success, failure, duration_s))
}

/// One per-bucket slice of the run: attempts plus strict-mode failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeBucket {
    pub bucket_start_s: u64,
    pub attempts: u64,
    pub failures: u64,
}

/// Per-bucket counts from record timestamps; buckets with no records are
/// emitted as zeros up to the last record. An empty log yields no buckets.
pub fn time_series(path: &Path, bucket_s: u32) -> Result<Vec<TimeBucket>, ReportError> {
    assert!(bucket_s >= 1, "bucket size must be at least one second");
    let raw = std::fs::read_to_string(path)?;
    let bucket_ms = bucket_s as u64 * 1000;
    let mut counts: HashMap<u64, (u64, u64)> = HashMap::new();
    let mut last_bucket = None;
    for (idx, line) in raw.lines().enumerate() {
        let parsed = parse_line(path, idx as u64 + 1, line)?;
        let bucket = parsed.ts_ms / bucket_ms;
        let entry = counts.entry(bucket).or_insert((0, 0));
        entry.0 += 1;
        if parsed.outcome != "ServerSuccess" {
            entry.1 += 1;
        }
        last_bucket = Some(last_bucket.map_or(bucket, |b: u64| b.max(bucket)));
    }
    let Some(last) = last_bucket else {
        return Ok(Vec::new());
    };
    Ok((0..=last)
        .map(|b| {
            let (attempts, failures) = counts.get(&b).copied().unwrap_or((0, 0));
            TimeBucket {
                bucket_start_s: b * bucket_s as u64,
                attempts,
                failures,
            }
        })
        .collect())
}
