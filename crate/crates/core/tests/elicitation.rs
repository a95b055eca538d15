use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use spatialcov::elicit::{
    ElicitError, ElicitOutcome, ElicitationSpec, Elicitor, Language, ParseError, ProviderProfile, ScriptedTransport,
    Transport, TransportError,
};
use spatialcov::fixtures::synthetic_manifest;
use spatialcov::label_store::{LabelOrigin, SetTag};

fn spec(target: &str, n: usize) -> ElicitationSpec {
    let manifest = synthetic_manifest(&[(SetTag::Trps, n)]);
    let mut profile = ProviderProfile::new("test", "https://provider.invalid/v1/chat", "model-z");
    profile.credential_env = Some("TEST_KEY".into());
    profile.headers.insert("authorization".into(), "Bearer {{credential}}".into());
    profile.limits.min_interval_ms = 0;
    ElicitationSpec::new(
        Language::from_code(target).unwrap(),
        Language::from_code("en").unwrap(),
        (0..n).map(|i| if i % 3 == 0 { "in".to_string() } else { "on".to_string() }).collect(),
        manifest,
        profile,
    )
    .unwrap()
}

fn reply(lines: usize) -> Vec<u8> {
    let text: String = (1..=lines).map(|i| format!("{i}. 위{}\n", i % 4)).collect();
    serde_json::to_vec(&serde_json::json!({"choices": [{"message": {"content": text}}]})).unwrap()
}

fn elicitor(t: &Arc<ScriptedTransport>) -> Elicitor {
    Elicitor::new(t.clone())
        .with_credentials(|name| (name == "TEST_KEY").then(|| "sk-test".to_string()))
        .with_sleep(|_| {})
}

fn retryable() -> Result<Vec<u8>, TransportError> {
    Err(TransportError { retryable: true, message: "HTTP 503".into() })
}

#[test]
fn dry_run_makes_no_calls() {
    let dir = tempfile::tempdir().unwrap();
    let t = Arc::new(ScriptedTransport::new());
    let out = elicitor(&t).run(&spec("ko", 5), dir.path(), true).unwrap();
    assert_eq!(t.calls(), 0);
    match out {
        ElicitOutcome::DryRun { prompt, request_path, .. } => {
            let body: serde_json::Value = serde_json::from_slice(&std::fs::read(request_path).unwrap()).unwrap();
            assert_eq!(body["messages"][0]["content"], serde_json::Value::String(prompt.text));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn warm_cache_repeats_labels_without_calls() {
    let dir = tempfile::tempdir().unwrap();
    let t = Arc::new(ScriptedTransport::new());
    t.push(Ok(reply(6)));
    let e = elicitor(&t);
    let first = e.run(&spec("ko", 6), dir.path(), false).unwrap();
    assert_eq!(t.calls(), 1);
    let second = e.run(&spec("ko", 6), dir.path(), false).unwrap();
    assert_eq!(t.calls(), 1);
    assert_eq!(first.table(), second.table());
    assert!(matches!(second, ElicitOutcome::Labels { cache_hit: true, .. }));
    let table = first.table().unwrap();
    assert_eq!(table.origin(), LabelOrigin::Llm);
    assert_eq!(table.len(), 6);
    assert!(table.entries().iter().all(|e| e.annotator_id == "model-z" && e.language == "ko"));
    assert_eq!(table.entries()[0].normalized_label, "위1");

    let (url, headers, body) = &t.requests()[0];
    assert_eq!(url, "https://provider.invalid/v1/chat");
    assert_eq!(headers, &vec![("authorization".to_string(), "Bearer sk-test".to_string())]);
    let on_disk = std::fs::read(dir.path().join(format!("{}.request", first.key()))).unwrap();
    assert_eq!(&on_disk, body);
    assert!(!String::from_utf8_lossy(&on_disk).contains("sk-test"));
}

#[test]
fn short_response_is_kept_as_failed() {
    let dir = tempfile::tempdir().unwrap();
    let t = Arc::new(ScriptedTransport::new());
    t.push(Ok(reply(219)));
    let err = elicitor(&t).run(&spec("ja", 220), dir.path(), false).unwrap_err();
    match err {
        ElicitError::ParseFailed { path, source } => {
            assert_eq!(source, ParseError::CountMismatch { expected: 220, found: 219 });
            assert!(path.to_string_lossy().ends_with(".response.failed"));
            assert_eq!(std::fs::read(&path).unwrap(), reply(219));
            let live = path.with_extension("");
            assert!(live.to_string_lossy().ends_with(".response"));
            assert!(!live.exists());
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn unexpected_shape_is_kept_as_failed() {
    let dir = tempfile::tempdir().unwrap();
    let t = Arc::new(ScriptedTransport::new());
    t.push(Ok(b"{\"error\": \"quota\"}".to_vec()));
    let err = elicitor(&t).run(&spec("ja", 3), dir.path(), false).unwrap_err();
    assert!(matches!(err, ElicitError::ResponseShape { ref path, .. } if path.exists()), "{err}");
}

#[test]
fn transient_failures_are_retried() {
    let dir = tempfile::tempdir().unwrap();
    let t = Arc::new(ScriptedTransport::new());
    t.push(retryable());
    t.push(retryable());
    t.push(Ok(reply(4)));
    elicitor(&t).run(&spec("fr", 4), dir.path(), false).unwrap();
    assert_eq!(t.calls(), 3);
}

#[test]
fn retries_stop_after_five_attempts() {
    let dir = tempfile::tempdir().unwrap();
    let t = Arc::new(ScriptedTransport::new());
    for _ in 0..7 {
        t.push(retryable());
    }
    let err = elicitor(&t).run(&spec("fr", 4), dir.path(), false).unwrap_err();
    assert!(matches!(err, ElicitError::Transport { attempts: 5, .. }), "{err}");
    assert_eq!(t.calls(), 5);
}

#[test]
fn client_errors_are_not_retried() {
    let dir = tempfile::tempdir().unwrap();
    let t = Arc::new(ScriptedTransport::new());
    t.push(Err(TransportError { retryable: false, message: "HTTP 401".into() }));
    let err = elicitor(&t).run(&spec("fr", 4), dir.path(), false).unwrap_err();
    assert!(matches!(err, ElicitError::Transport { attempts: 1, .. }));
}

#[test]
fn missing_credential_fails_before_sending() {
    let dir = tempfile::tempdir().unwrap();
    let t = Arc::new(ScriptedTransport::new());
    let e = Elicitor::new(t.clone()).with_credentials(|_| None);
    let err = e.run(&spec("fr", 4), dir.path(), false).unwrap_err();
    assert!(matches!(err, ElicitError::CredentialMissing(ref v) if v == "TEST_KEY"));
    assert_eq!(t.calls(), 0);
    // a dry run needs no credential
    e.run(&spec("fr", 4), dir.path(), true).unwrap();
}

/// Tracks overlap and start times of requests.
struct SlowTransport {
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    starts: Mutex<Vec<Instant>>,
    lines: usize,
}

impl Transport for SlowTransport {
    fn post(&self, _: &str, _: &[(String, String)], _: &[u8]) -> Result<Vec<u8>, TransportError> {
        self.starts.lock().unwrap().push(Instant::now());
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(60));
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        Ok(reply(self.lines))
    }
}

#[test]
fn concurrent_runs_respect_limits() {
    let dir = tempfile::tempdir().unwrap();
    let t = Arc::new(SlowTransport {
        in_flight: AtomicUsize::new(0),
        peak: AtomicUsize::new(0),
        starts: Mutex::new(Vec::new()),
        lines: 3,
    });
    let specs: Vec<ElicitationSpec> = ["fr", "de", "ja", "ko", "nl", "es"]
        .iter()
        .map(|code| {
            let mut s = spec(code, 3);
            s.provider.limits.max_in_flight = 2;
            s.provider.limits.min_interval_ms = 20;
            s
        })
        .collect();
    let e = Elicitor::new(t.clone()).with_credentials(|_| Some("k".into()));
    let results = e.run_many(&specs, dir.path(), false);
    for (s, r) in specs.iter().zip(&results) {
        let table = r.as_ref().unwrap().table().unwrap();
        assert_eq!(table.entries()[0].language, s.target.code);
    }
    assert!(t.peak.load(Ordering::SeqCst) <= 2);
    let mut starts = t.starts.lock().unwrap().clone();
    starts.sort();
    for w in starts.windows(2) {
        assert!(w[1] - w[0] >= Duration::from_millis(19), "{:?}", w[1] - w[0]);
    }
}
