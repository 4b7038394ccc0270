//! Flood engine behavior against the bundled target and stubs.

mod common;

use std::collections::HashSet;
use std::time::{Duration, Instant};

use common::*;
use loadforge::flood::{run_flood, FloodError, Profile, RunConfig};
use loadforge::metrics::Mode;
use loadforge::payload::{PayloadCorpus, PayloadEntry};
use loadforge::report::recount_log;

fn base_config(addr: std::net::SocketAddr, log: std::path::PathBuf) -> RunConfig {
    RunConfig {
        duration_s: 1,
        workers: 2,
        max_connections: 2,
        ..RunConfig::new(search_url(addr), log)
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn slow_drip_send_count_matches_timing_arithmetic() {
    let server = start_idle_target().await;
    let dir = tempfile::tempdir().unwrap();
    let log = temp_log(&dir, "drip.jsonl");

    let report = run_flood(RunConfig {
        duration_s: 1,
        workers: 1,
        max_connections: 1,
        profile: Profile::SlowDrip { delay_ms: 500 },
        mode: Mode::Oracle,
        ..base_config(server.addr(), log.clone())
    })
    .await
    .unwrap();

    // sends at t=0 and t=500: floor(1000/500) with scheduling slack
    assert!(
        (1..=3).contains(&report.tally.total),
        "expected 2 +/- 1 sends, got {}",
        report.tally.total
    );
    assert_eq!(report.tally.failure, 0, "idle target answers correctly");
    assert_eq!(report.records_written, report.tally.total);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unreachable_target_aborts_with_empty_log() {
    // bind-then-drop to get a port with nothing listening
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);

    let dir = tempfile::tempdir().unwrap();
    let log = temp_log(&dir, "dead.jsonl");
    let err = run_flood(base_config(addr, log.clone())).await.unwrap_err();
    assert!(matches!(err, FloodError::TargetUnreachableAtStart { .. }), "{err}");
    let contents = std::fs::read(&log).unwrap();
    assert!(contents.is_empty(), "log must exist and be empty");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn conservation_log_schema_and_recount_agreement() {
    let server = start_idle_target().await;
    let dir = tempfile::tempdir().unwrap();
    let log = temp_log(&dir, "run.jsonl");

    let config = RunConfig {
        duration_s: 1,
        workers: 4,
        max_connections: 4,
        ..base_config(server.addr(), log.clone())
    };
    let expected = config.corpus.expected_map();
    let report = run_flood(config).await.unwrap();

    let lines = read_log(&log);
    let attempted: u64 = report.worker_stats.iter().map(|w| w.attempted).sum();
    assert_eq!(lines.len() as u64, attempted);
    assert_eq!(report.records_written, attempted);
    assert_eq!(report.tally.total, attempted);
    for stats in &report.worker_stats {
        assert_eq!(stats.attempted, stats.counts.sum());
    }

    // wire schema: exact key set, correct types, marker/status consistency
    let expected_keys: HashSet<&str> =
        ["ts_ms", "worker", "outcome", "status", "marker", "latency_ms", "payload"]
            .into_iter()
            .collect();
    for line in &lines {
        let object = line.as_object().expect("record is an object");
        let keys: HashSet<&str> = object.keys().map(|k| k.as_str()).collect();
        assert_eq!(keys, expected_keys);
        assert!(line["ts_ms"].is_u64());
        assert!(line["worker"].is_u64());
        assert!(line["latency_ms"].is_u64());
        assert!(line["payload"].is_string());
        let outcome = line["outcome"].as_str().unwrap();
        match outcome {
            "ServerSuccess" => {
                assert_eq!(line["marker"].as_str(), Some("success"));
                let status = line["status"].as_u64().unwrap();
                assert!((200..300).contains(&status));
            }
            "ServerFailed" => assert_eq!(line["marker"].as_str(), Some("failed")),
            "Timeout" | "ConnectError" => assert!(line["status"].is_null()),
            _ => {}
        }
        if outcome != "Timeout" {
            assert!(line["latency_ms"].as_u64().unwrap() <= 2000, "latency within timeout");
        }
    }

    let recounted = recount_log(&log, Mode::Strict, &expected, 1).unwrap();
    assert_eq!(recounted, report.tally);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn shared_pool_caps_connections_seen_by_target() {
    let server = start_target(|c| {
        c.work_ms = 2;
        c.capacity = 16;
        c.queue_depth = 64;
    })
    .await;
    let dir = tempfile::tempdir().unwrap();
    let log = temp_log(&dir, "cap.jsonl");

    let report = run_flood(RunConfig {
        duration_s: 1,
        workers: 8,
        max_connections: 3,
        ..base_config(server.addr(), log)
    })
    .await
    .unwrap();

    assert!(report.tally.total > 0);
    let timeouts: u64 = report.worker_stats.iter().map(|w| w.counts.timeout).sum();
    assert_eq!(timeouts, 0, "an admitting fast target never times out");

    let stats = fetch_stats(server.addr()).await;
    assert!(
        stats.peak_connections <= 3,
        "pool of 3 slots leaked connections: peak {}",
        stats.peak_connections
    );
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn single_seeded_worker_follows_round_robin_order() {
    let stub = start_success_stub().await;
    let dir = tempfile::tempdir().unwrap();

    let corpus = PayloadCorpus::new(
        ["alpha", "beta", "gamma"]
            .into_iter()
            .map(|n| PayloadEntry {
                course_name: n.to_string(),
                expected_present: true,
            })
            .collect(),
    )
    .unwrap();

    let mut sequences = Vec::new();
    for run in 0..2 {
        let log = temp_log(&dir, &format!("seeded{run}.jsonl"));
        let report = run_flood(RunConfig {
            duration_s: 1,
            workers: 1,
            max_connections: 1,
            corpus: corpus.clone(),
            seed: 4,
            ..RunConfig::new(url::Url::parse(&format!("http://{stub}/search")).unwrap(), log.clone())
        })
        .await
        .unwrap();
        assert_eq!(report.tally.failure, 0, "stub always answers SUCCESS");
        sequences.push(payload_sequence(&log));
    }

    let names = ["alpha", "beta", "gamma"];
    for sequence in &sequences {
        assert!(!sequence.is_empty());
        for (k, payload) in sequence.iter().enumerate() {
            // cursor starts at the seed and walks round-robin
            assert_eq!(payload, names[(4 + k) % names.len()], "position {k}");
        }
    }
    let shared = sequences[0].len().min(sequences[1].len());
    assert_eq!(sequences[0][..shared], sequences[1][..shared]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn silent_target_times_out_every_attempt() {
    let stub = start_silent_stub().await;
    let dir = tempfile::tempdir().unwrap();
    let log = temp_log(&dir, "silent.jsonl");

    let started = Instant::now();
    let report = run_flood(RunConfig {
        duration_s: 1,
        workers: 2,
        max_connections: 2,
        request_timeout_ms: 100,
        ..RunConfig::new(url::Url::parse(&format!("http://{stub}/search")).unwrap(), log.clone())
    })
    .await
    .unwrap();

    // deadline discipline: duration + timeout + scheduling slack
    assert!(started.elapsed() <= Duration::from_millis(1000 + 100 + 1000));
    assert!(report.tally.total > 0);
    assert_eq!(report.tally.success, 0);
    let timeouts: u64 = report.worker_stats.iter().map(|w| w.counts.timeout).sum();
    assert_eq!(timeouts, report.tally.total, "every attempt times out");
    for line in read_log(&log) {
        assert_eq!(line["outcome"].as_str(), Some("Timeout"));
        assert!(line["status"].is_null());
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn get_flood_profile_drives_the_query_surface() {
    let server = start_idle_target().await;
    let dir = tempfile::tempdir().unwrap();
    let log = temp_log(&dir, "get.jsonl");

    let report = run_flood(RunConfig {
        duration_s: 1,
        workers: 2,
        max_connections: 2,
        profile: Profile::GetFlood,
        mode: Mode::Oracle,
        ..base_config(server.addr(), log)
    })
    .await
    .unwrap();

    assert!(report.tally.total > 0);
    assert_eq!(report.tally.failure, 0, "idle target answers every GET correctly");
    let stats = fetch_stats(server.addr()).await;
    assert_eq!(
        stats.served_success + stats.served_failed,
        report.tally.total,
        "every attempt reached the search handler"
    );
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn overload_503_classifies_as_overload_rejected() {
    let server = start_target(|c| {
        c.capacity = 1;
        c.queue_depth = 0;
        c.work_ms = 30;
        c.overload = loadforge::target::OverloadResponse::Status503;
    })
    .await;
    let dir = tempfile::tempdir().unwrap();
    let log = temp_log(&dir, "overload.jsonl");

    let report = run_flood(RunConfig {
        duration_s: 1,
        workers: 6,
        max_connections: 6,
        ..base_config(server.addr(), log.clone())
    })
    .await
    .unwrap();

    let rejected: u64 = report
        .worker_stats
        .iter()
        .map(|w| w.counts.overload_rejected)
        .sum();
    assert!(rejected > 0, "six workers against one slot must overflow");
    assert!(read_log(&log)
        .iter()
        .any(|l| l["outcome"].as_str() == Some("OverloadRejected")
            && l["status"].as_u64() == Some(503)));
}
