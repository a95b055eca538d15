//! LLM label elicitation: prompt construction, provider calls, response
//! parsing and an on-disk response cache.
//!
//! Cache layout is `<cache_dir>/<key>.request` and `<cache_dir>/<key>.response`,
//! where `key` is [`cache_key`]. A response that fails to parse is moved to
//! `<key>.response.failed` so the next run asks again.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::digest::{format_g17, sha256_hex};
use crate::label_store::{normalize_label, Highlight, LabelEntry, LabelError, LabelOrigin, LabelTable, SceneManifest};

pub const DEFAULT_ATTACHMENT: &str = "scenes.pdf";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("expected {expected} numbered labels, found {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("line {line}: expected item {expected}, found item {found}")]
    OutOfOrder { line: usize, expected: usize, found: usize },
    #[error("line {line}: cannot parse `{content}` as a numbered label")]
    Unparseable { line: usize, content: String },
    #[error("line {line}: label is empty")]
    EmptyLabel { line: usize },
}

#[derive(Debug, Error)]
pub enum ElicitError {
    #[error("{labels} reference labels for {scenes} scenes")]
    LengthMismatch { labels: usize, scenes: usize },
    #[error("reference label for image {page} is missing")]
    MissingReferenceLabel { page: u32 },
    #[error("target and reference language are both `{0}`")]
    SameLanguage(String),
    #[error("no display name known for language code `{0}`")]
    UnknownLanguage(String),
    #[error("temperature must be finite and non-negative, got {0}")]
    BadTemperature(f64),
    #[error("invalid provider profile: {0}")]
    Profile(String),
    #[error("credential variable `{0}` is not set")]
    CredentialMissing(String),
    #[error("request failed after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("provider response has an unexpected shape: {message} (raw response kept at {})", .path.display())]
    ResponseShape { path: PathBuf, message: String },
    #[error("could not parse provider response: {source} (raw response kept at {})", .path.display())]
    ParseFailed { path: PathBuf, source: ParseError },
    #[error("{}: {message}", .path.display())]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Label(#[from] LabelError),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ElicitError {
    ElicitError::Io { path: path.to_path_buf(), message: e.to_string() }
}

const LANGUAGE_NAMES: &[(&str, &str)] = &[
    ("ar", "Arabic"),
    ("da", "Danish"),
    ("de", "German"),
    ("el", "Greek"),
    ("en", "English"),
    ("es", "Spanish"),
    ("fa", "Persian"),
    ("fi", "Finnish"),
    ("fr", "French"),
    ("he", "Hebrew"),
    ("hi", "Hindi"),
    ("hu", "Hungarian"),
    ("id", "Indonesian"),
    ("it", "Italian"),
    ("ja", "Japanese"),
    ("ko", "Korean"),
    ("nl", "Dutch"),
    ("no", "Norwegian"),
    ("pl", "Polish"),
    ("pt", "Portuguese"),
    ("ro", "Romanian"),
    ("ru", "Russian"),
    ("sv", "Swedish"),
    ("sw", "Swahili"),
    ("th", "Thai"),
    ("tr", "Turkish"),
    ("uk", "Ukrainian"),
    ("vi", "Vietnamese"),
    ("yue", "Cantonese"),
    ("zh", "Chinese"),
];

pub fn language_name(code: &str) -> Option<&'static str> {
    LANGUAGE_NAMES.iter().find(|(c, _)| *c == code).map(|(_, n)| *n)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Language {
    pub code: String,
    pub name: String,
}

impl Language {
    pub fn new(code: impl Into<String>, name: impl Into<String>) -> Self {
        Language { code: code.into(), name: name.into() }
    }

    pub fn from_code(code: &str) -> Result<Self, ElicitError> {
        language_name(code).map(|n| Language::new(code, n)).ok_or_else(|| ElicitError::UnknownLanguage(code.into()))
    }
}

/// English is the reference for every target except English itself, whose
/// reference is Chinese.
pub fn reference_policy(target: &str) -> &'static str {
    if target == "en" {
        "zh"
    } else {
        "en"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateLimits {
    pub max_in_flight: usize,
    pub min_interval_ms: u64,
}

impl Default for RateLimits {
    fn default() -> Self {
        RateLimits { max_in_flight: 4, min_interval_ms: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 5, initial_backoff_ms: 500, max_backoff_ms: 8000 }
    }
}

impl RetryPolicy {
    pub fn delay_after(&self, attempt: usize) -> Duration {
        let ms = self.initial_backoff_ms.saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(ms.min(self.max_backoff_ms))
    }
}

fn default_body_template() -> Value {
    serde_json::json!({
        "model": "{{model}}",
        "temperature": "{{temperature}}",
        "messages": [{"role": "user", "content": "{{prompt}}"}],
        "attachment": "{{attachment}}"
    })
}

fn default_response_pointer() -> String {
    "/choices/0/message/content".into()
}

/// Everything provider-specific lives here, so a new endpoint is a JSON file.
///
/// `body_template` is any JSON value. A string that is exactly
/// `"{{temperature}}"` becomes a number and exactly `"{{attachment}}"` becomes
/// the attachment name or `null`; elsewhere `{{model}}`, `{{prompt}}` and
/// `{{attachment}}` are substituted inside strings. Header values may use
/// `{{credential}}`, which is read from the `credential_env` variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderProfile {
    pub name: String,
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub credential_env: Option<String>,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    #[serde(default = "default_body_template")]
    pub body_template: Value,
    /// JSON pointer to the response text; empty means the raw body is the text.
    #[serde(default = "default_response_pointer")]
    pub response_pointer: String,
    #[serde(default)]
    pub limits: RateLimits,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl ProviderProfile {
    pub fn new(name: impl Into<String>, base_url: impl Into<String>, model: impl Into<String>) -> Self {
        ProviderProfile {
            name: name.into(),
            base_url: base_url.into(),
            model: model.into(),
            credential_env: None,
            headers: BTreeMap::new(),
            body_template: default_body_template(),
            response_pointer: default_response_pointer(),
            limits: RateLimits::default(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, ElicitError> {
        let p: ProviderProfile = serde_json::from_slice(bytes).map_err(|e| ElicitError::Profile(e.to_string()))?;
        if p.model.is_empty() || p.base_url.is_empty() {
            return Err(ElicitError::Profile("base_url and model must be non-empty".into()));
        }
        if p.limits.max_in_flight == 0 || p.retry.max_attempts == 0 {
            return Err(ElicitError::Profile("max_in_flight and max_attempts must be at least 1".into()));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElicitationSpec {
    pub target: Language,
    pub reference: Language,
    /// One per manifest page, in page order.
    pub reference_labels: Vec<String>,
    pub manifest: SceneManifest,
    pub text_only: bool,
    pub attachment: String,
    pub provider: ProviderProfile,
    pub temperature: f64,
}

impl ElicitationSpec {
    pub fn new(
        target: Language,
        reference: Language,
        reference_labels: Vec<String>,
        manifest: SceneManifest,
        provider: ProviderProfile,
    ) -> Result<Self, ElicitError> {
        if reference_labels.len() != manifest.len() {
            return Err(ElicitError::LengthMismatch { labels: reference_labels.len(), scenes: manifest.len() });
        }
        Ok(ElicitationSpec {
            target,
            reference,
            reference_labels,
            manifest,
            text_only: false,
            attachment: DEFAULT_ATTACHMENT.into(),
            provider,
            temperature: 0.0,
        })
    }

    pub fn text_only(mut self, on: bool) -> Self {
        self.text_only = on;
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Result<Self, ElicitError> {
        if !t.is_finite() || t < 0.0 {
            return Err(ElicitError::BadTemperature(t));
        }
        self.temperature = t;
        Ok(self)
    }

    pub fn with_attachment(mut self, name: impl Into<String>) -> Self {
        self.attachment = name.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptDoc {
    pub text: String,
    /// Document sent alongside the text; `None` in text-only mode.
    pub attachment: Option<String>,
    pub digest: String,
}

impl PromptDoc {
    fn new(text: String, attachment: Option<String>) -> Self {
        let mut canonical = text.clone().into_bytes();
        canonical.extend_from_slice(b"\n\x00attachment:");
        match &attachment {
            Some(a) => canonical.extend_from_slice(a.as_bytes()),
            None => canonical.extend_from_slice(b"\x00none"),
        }
        PromptDoc { digest: sha256_hex(&canonical), text, attachment }
    }
}

fn indefinite_article(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "An",
        _ => "A",
    }
}

fn highlight_sentence(highlight: Highlight, first: u32, last: u32) -> String {
    let span = if first == last { format!("In image {first}") } else { format!("From image {first} to image {last}") };
    match highlight {
        Highlight::Gold => format!("{span}, the focal object is gold and the background object is black."),
        Highlight::YellowArrow => format!(
            "{span}, the focal object is yellow and indicated by an arrow, and the background object is black or blue."
        ),
        Highlight::RedArrow => format!("{span}, the focal object is indicated by a red arrow."),
    }
}

pub fn build_prompt(spec: &ElicitationSpec) -> Result<PromptDoc, ElicitError> {
    if spec.reference_labels.len() != spec.manifest.len() {
        return Err(ElicitError::LengthMismatch { labels: spec.reference_labels.len(), scenes: spec.manifest.len() });
    }
    if spec.target.code == spec.reference.code {
        return Err(ElicitError::SameLanguage(spec.target.code.clone()));
    }
    let mut entries = Vec::with_capacity(spec.reference_labels.len());
    for (scene, label) in spec.manifest.scenes().iter().zip(&spec.reference_labels) {
        let label = label.trim();
        if label.is_empty() {
            return Err(ElicitError::MissingReferenceLabel { page: scene.page_number });
        }
        entries.push(format!("{}) \"{}\"", scene.page_number, label));
    }
    let t = &spec.target.name;
    let r = &spec.reference.name;
    let doc = &spec.attachment;
    let highlights: Vec<String> = spec
        .manifest
        .highlight_runs()
        .iter()
        .map(|run| highlight_sentence(run.highlight, run.first_page, run.last_page))
        .collect();

    let mut text = format!(
        "You are a native speaker of {t} and I'd like you to respond in {t}. \
         Your task is to label the spatial relationships shown in a set of images. \
         Here is a set of images that I'll call {doc}. \
         Each image shows a focal object and a background object. {highlights} \
         {article} {r} speaker used the following spatial terms to describe the relationship \
         between the focal object and the background object in each image: {entries}. \
         I'd like you to label the same images in {doc}. \
         For each image in {doc}, please give me the spatial term in {t} that best describes \
         the relationship between the focal object and the background object. \
         For each image, please respond using a single spatial term instead of a full sentence. \
         And please do not translate the responses I gave you in {r}! \
         Instead, I'd like you to respond as a native {t} speaker would. \
         Your responses (one for each image in {doc}) should be organized into a numbered list.",
        highlights = highlights.join(" "),
        article = indefinite_article(r),
        entries = entries.join("; "),
    );
    let attachment = if spec.text_only {
        text.push_str(&format!("\n\nContents of {doc}:\n"));
        for s in spec.manifest.scenes() {
            text.push_str(&format!(
                "image {} - focal object: {}; background object: {}\n",
                s.page_number, s.focal_object, s.background_object
            ));
        }
        None
    } else {
        Some(doc.clone())
    };
    Ok(PromptDoc::new(text, attachment))
}

/// One label per line as `N) label`.
/// Labels are always double-quoted so the parser strips exactly the quotes it added.
pub fn format_numbered_list<S: AsRef<str>>(labels: &[S]) -> String {
    labels.iter().enumerate().map(|(i, l)| format!("{}) \"{}\"\n", i + 1, l.as_ref())).collect()
}

fn numbered_line() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(\d+)\s*[.):]\s*(.*)$").expect("valid regex"))
}

fn strip_quotes(s: &str) -> &str {
    const PAIRS: &[(char, char)] =
        &[('"', '"'), ('\'', '\''), ('“', '”'), ('‘', '’'), ('「', '」'), ('『', '』'), ('«', '»')];
    let s = s.trim();
    for (open, close) in PAIRS {
        if let Some(inner) = s.strip_prefix(*open).and_then(|r| r.strip_suffix(*close)) {
            return inner.trim();
        }
    }
    s
}

/// Raw (quote-stripped) labels, in order.
fn parse_numbered_raw(text: &str, expected_n: usize) -> Result<Vec<String>, ParseError> {
    let mut out = Vec::with_capacity(expected_n);
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let caps = numbered_line()
            .captures(trimmed)
            .ok_or_else(|| ParseError::Unparseable { line: lineno, content: line.to_string() })?;
        let found: usize =
            caps[1].parse().map_err(|_| ParseError::Unparseable { line: lineno, content: line.to_string() })?;
        if found != out.len() + 1 {
            return Err(ParseError::OutOfOrder { line: lineno, expected: out.len() + 1, found });
        }
        let label = strip_quotes(&caps[2]);
        if label.is_empty() {
            return Err(ParseError::EmptyLabel { line: lineno });
        }
        out.push(label.to_string());
    }
    if out.len() != expected_n {
        return Err(ParseError::CountMismatch { expected: expected_n, found: out.len() });
    }
    Ok(out)
}

/// Accepts `N) label`, `N. label` and `N: label` lines numbered 1..=expected_n
/// in order; blank lines are skipped. Labels come back normalized.
pub fn parse_numbered_response(text: &str, expected_n: usize) -> Result<Vec<String>, ParseError> {
    let raw = parse_numbered_raw(text, expected_n)?;
    Ok(raw.iter().map(|l| normalize_label(l).expect("non-empty after strip")).collect())
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    base_url: &'a str,
    model: &'a str,
    temperature: String,
    prompt_digest: &'a str,
}

pub fn cache_key(spec: &ElicitationSpec, prompt: &PromptDoc) -> String {
    let material = KeyMaterial {
        base_url: &spec.provider.base_url,
        model: &spec.provider.model,
        temperature: format_g17(spec.temperature),
        prompt_digest: &prompt.digest,
    };
    sha256_hex(&serde_json::to_vec(&material).expect("serializable"))
}

fn render_value(v: &Value, model: &str, temperature: f64, prompt: &PromptDoc) -> Value {
    match v {
        Value::String(s) if s == "{{temperature}}" => {
            serde_json::Number::from_f64(temperature).map(Value::Number).unwrap_or(Value::Null)
        }
        Value::String(s) if s == "{{attachment}}" => {
            prompt.attachment.clone().map(Value::String).unwrap_or(Value::Null)
        }
        Value::String(s) => Value::String(
            s.replace("{{model}}", model)
                .replace("{{attachment}}", prompt.attachment.as_deref().unwrap_or(""))
                .replace("{{prompt}}", &prompt.text),
        ),
        Value::Array(items) => {
            Value::Array(items.iter().map(|x| render_value(x, model, temperature, prompt)).collect())
        }
        Value::Object(map) => {
            Value::Object(map.iter().map(|(k, x)| (k.clone(), render_value(x, model, temperature, prompt))).collect())
        }
        other => other.clone(),
    }
}

/// Request body bytes for `prompt` under the provider's template.
pub fn render_request(spec: &ElicitationSpec, prompt: &PromptDoc) -> Vec<u8> {
    let body = render_value(&spec.provider.body_template, &spec.provider.model, spec.temperature, prompt);
    serde_json::to_vec_pretty(&body).expect("serializable")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message}")]
pub struct TransportError {
    pub retryable: bool,
    pub message: String,
}

pub trait Transport: Send + Sync {
    fn post(&self, url: &str, headers: &[(String, String)], body: &[u8]) -> Result<Vec<u8>, TransportError>;
}

/// Blocking HTTPS client.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        HttpTransport { agent }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        HttpTransport::new(Duration::from_secs(600))
    }
}

impl Transport for HttpTransport {
    fn post(&self, url: &str, headers: &[(String, String)], body: &[u8]) -> Result<Vec<u8>, TransportError> {
        let mut req = self.agent.post(url).header("content-type", "application/json");
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let mut resp = req.send(body).map_err(|e| TransportError { retryable: true, message: e.to_string() })?;
        let status = resp.status().as_u16();
        let bytes =
            resp.body_mut().read_to_vec().map_err(|e| TransportError { retryable: true, message: e.to_string() })?;
        if (200..300).contains(&status) {
            return Ok(bytes);
        }
        let snippet: String = String::from_utf8_lossy(&bytes).chars().take(300).collect();
        Err(TransportError {
            retryable: status == 408 || status == 429 || status >= 500,
            message: format!("HTTP {status}: {snippet}"),
        })
    }
}

/// One recorded request: url, headers, body.
pub type RecordedRequest = (String, Vec<(String, String)>, Vec<u8>);

/// Test double that replays queued responses and records every request.
#[derive(Default)]
pub struct ScriptedTransport {
    responses: Mutex<VecDeque<Result<Vec<u8>, TransportError>>>,
    requests: Mutex<Vec<RecordedRequest>>,
    calls: AtomicUsize,
}

impl ScriptedTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, response: Result<Vec<u8>, TransportError>) {
        self.responses.lock().expect("lock").push_back(response);
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.requests.lock().expect("lock").clone()
    }
}

impl Transport for ScriptedTransport {
    fn post(&self, url: &str, headers: &[(String, String)], body: &[u8]) -> Result<Vec<u8>, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.requests.lock().expect("lock").push((url.to_string(), headers.to_vec(), body.to_vec()));
        self.responses
            .lock()
            .expect("lock")
            .pop_front()
            .unwrap_or_else(|| Err(TransportError { retryable: false, message: "no scripted response left".into() }))
    }
}

/// Spaces request starts per provider by at least the profile's interval.
#[derive(Default)]
struct Pacer {
    last_start: Mutex<HashMap<String, Arc<Mutex<Option<Instant>>>>>,
}

impl Pacer {
    fn wait(&self, provider: &str, interval: Duration) {
        let slot = self.last_start.lock().expect("lock").entry(provider.to_string()).or_default().clone();
        let mut last = slot.lock().expect("lock");
        if let Some(prev) = *last {
            let ready = prev + interval;
            let now = Instant::now();
            if ready > now {
                std::thread::sleep(ready - now);
            }
        }
        *last = Some(Instant::now());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ElicitOutcome {
    DryRun { prompt: PromptDoc, key: String, request_path: PathBuf },
    Labels { table: LabelTable, key: String, cache_hit: bool },
}

impl ElicitOutcome {
    pub fn key(&self) -> &str {
        match self {
            ElicitOutcome::DryRun { key, .. } | ElicitOutcome::Labels { key, .. } => key,
        }
    }

    pub fn table(&self) -> Option<&LabelTable> {
        match self {
            ElicitOutcome::Labels { table, .. } => Some(table),
            ElicitOutcome::DryRun { .. } => None,
        }
    }
}

type CredentialSource = Box<dyn Fn(&str) -> Option<String> + Send + Sync>;

pub struct Elicitor {
    transport: Arc<dyn Transport>,
    credentials: CredentialSource,
    pacer: Pacer,
    sleep: fn(Duration),
}

fn write_atomic(dir: &Path, path: &Path, bytes: &[u8]) -> Result<(), ElicitError> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

impl Elicitor {
    /// Credentials come from the process environment.
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Elicitor {
            transport,
            credentials: Box::new(|name| std::env::var(name).ok()),
            pacer: Pacer::default(),
            sleep: std::thread::sleep,
        }
    }

    pub fn with_credentials(mut self, source: impl Fn(&str) -> Option<String> + Send + Sync + 'static) -> Self {
        self.credentials = Box::new(source);
        self
    }

    /// Replaces the backoff sleep; tests use a no-op.
    pub fn with_sleep(mut self, sleep: fn(Duration)) -> Self {
        self.sleep = sleep;
        self
    }

    fn headers(&self, profile: &ProviderProfile) -> Result<Vec<(String, String)>, ElicitError> {
        let credential = match &profile.credential_env {
            Some(var) => Some((self.credentials)(var).ok_or_else(|| ElicitError::CredentialMissing(var.clone()))?),
            None => None,
        };
        Ok(profile
            .headers
            .iter()
            .map(|(k, v)| (k.clone(), v.replace("{{credential}}", credential.as_deref().unwrap_or(""))))
            .collect())
    }

    fn submit(
        &self,
        profile: &ProviderProfile,
        headers: &[(String, String)],
        body: &[u8],
    ) -> Result<Vec<u8>, ElicitError> {
        let interval = Duration::from_millis(profile.limits.min_interval_ms);
        let mut attempt = 0;
        loop {
            self.pacer.wait(&profile.base_url, interval);
            attempt += 1;
            match self.transport.post(&profile.base_url, headers, body) {
                Ok(bytes) => return Ok(bytes),
                Err(e) if e.retryable && attempt < profile.retry.max_attempts => {
                    (self.sleep)(profile.retry.delay_after(attempt - 1));
                }
                Err(e) => return Err(ElicitError::Transport { attempts: attempt, message: e.message }),
            }
        }
    }

    pub fn run(&self, spec: &ElicitationSpec, cache_dir: &Path, dry_run: bool) -> Result<ElicitOutcome, ElicitError> {
        let prompt = build_prompt(spec)?;
        let key = cache_key(spec, &prompt);
        fs::create_dir_all(cache_dir).map_err(|e| io_err(cache_dir, e))?;
        let request_path = cache_dir.join(format!("{key}.request"));
        let response_path = cache_dir.join(format!("{key}.response"));
        let body = render_request(spec, &prompt);

        if dry_run {
            write_atomic(cache_dir, &request_path, &body)?;
            return Ok(ElicitOutcome::DryRun { prompt, key, request_path });
        }

        let (raw, cache_hit) = match fs::read(&response_path) {
            Ok(bytes) => (bytes, true),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                let headers = self.headers(&spec.provider)?;
                write_atomic(cache_dir, &request_path, &body)?;
                let bytes = self.submit(&spec.provider, &headers, &body)?;
                write_atomic(cache_dir, &response_path, &bytes)?;
                (bytes, false)
            }
            Err(e) => return Err(io_err(&response_path, e)),
        };

        let failed_path = cache_dir.join(format!("{key}.response.failed"));
        let quarantine = || -> Result<(), ElicitError> {
            fs::rename(&response_path, &failed_path).map_err(|e| io_err(&failed_path, e))
        };
        let text = match response_text(&raw, &spec.provider.response_pointer) {
            Ok(t) => t,
            Err(message) => {
                quarantine()?;
                return Err(ElicitError::ResponseShape { path: failed_path, message });
            }
        };
        let labels = match parse_numbered_raw(&text, spec.manifest.len()) {
            Ok(l) => l,
            Err(source) => {
                quarantine()?;
                return Err(ElicitError::ParseFailed { path: failed_path, source });
            }
        };
        let entries = spec
            .manifest
            .scenes()
            .iter()
            .zip(&labels)
            .map(|(scene, label)| LabelEntry::new(&scene.scene_id, &spec.target.code, &spec.provider.model, label))
            .collect::<Result<Vec<_>, _>>()?;
        let table = LabelTable::new(entries, LabelOrigin::Llm)?;
        Ok(ElicitOutcome::Labels { table, key, cache_hit })
    }

    /// Runs several specs with at most `max_in_flight` at a time (the smallest
    /// bound among their profiles). Results follow input order.
    pub fn run_many(
        &self,
        specs: &[ElicitationSpec],
        cache_dir: &Path,
        dry_run: bool,
    ) -> Vec<Result<ElicitOutcome, ElicitError>> {
        let workers = specs.iter().map(|s| s.provider.limits.max_in_flight).min().unwrap_or(1).max(1);
        let next = AtomicUsize::new(0);
        let results: Vec<Mutex<Option<Result<ElicitOutcome, ElicitError>>>> =
            specs.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers.min(specs.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= specs.len() {
                        break;
                    }
                    let r = self.run(&specs[i], cache_dir, dry_run);
                    *results[i].lock().expect("lock") = Some(r);
                });
            }
        });
        results.into_iter().map(|m| m.into_inner().expect("lock").expect("every job ran")).collect()
    }
}

fn response_text(raw: &[u8], pointer: &str) -> Result<String, String> {
    if pointer.is_empty() {
        return String::from_utf8(raw.to_vec()).map_err(|e| format!("response is not UTF-8: {e}"));
    }
    let v: Value = serde_json::from_slice(raw).map_err(|e| format!("response is not JSON: {e}"))?;
    match v.pointer(pointer) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => Err(format!("`{pointer}` is not a string: {other}")),
        None => Err(format!("`{pointer}` not found in response")),
    }
}

/// One-shot convenience over [`Elicitor::run`] with environment credentials.
pub fn run_elicitation(
    spec: &ElicitationSpec,
    cache_dir: &Path,
    dry_run: bool,
    transport: Arc<dyn Transport>,
) -> Result<ElicitOutcome, ElicitError> {
    Elicitor::new(transport).run(spec, cache_dir, dry_run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label_store::{SceneRecord, SetTag};

    fn manifest(n: u32) -> SceneManifest {
        let scenes = (1..=n)
            .map(|p| SceneRecord {
                scene_id: format!("s{p:03}"),
                set_tag: SetTag::Trps,
                page_number: p,
                focal_object: format!("cup{p}"),
                background_object: "table".into(),
                highlight: if p <= n / 2 { Highlight::Gold } else { Highlight::RedArrow },
            })
            .collect();
        SceneManifest::new(scenes).unwrap()
    }

    fn spec(n: u32) -> ElicitationSpec {
        let labels = (1..=n).map(|p| if p % 2 == 0 { "in".to_string() } else { "on".to_string() }).collect();
        ElicitationSpec::new(
            Language::from_code("zh").unwrap(),
            Language::from_code("en").unwrap(),
            labels,
            manifest(n),
            ProviderProfile::new("test", "https://example.invalid/v1/chat", "model-a"),
        )
        .unwrap()
    }

    #[test]
    fn reference_policy_examples() {
        assert_eq!(reference_policy("en"), "zh");
        assert_eq!(reference_policy("ko"), "en");
        assert_eq!(reference_policy("zh"), "en");
    }

    #[test]
    fn prompt_contents() {
        let p = build_prompt(&spec(4)).unwrap();
        assert!(p.text.starts_with("You are a native speaker of Chinese and I'd like you to respond in Chinese."));
        assert!(p
            .text
            .contains("From image 1 to image 2, the focal object is gold and the background object is black."));
        assert!(p.text.contains("From image 3 to image 4, the focal object is indicated by a red arrow."));
        assert!(p.text.contains("An English speaker used the following spatial terms"));
        assert!(p.text.contains(r#"1) "on"; 2) "in"; 3) "on"; 4) "in". I'd like"#));
        assert!(p.text.contains("a single spatial term instead of a full sentence"));
        assert!(p.text.contains("please do not translate the responses I gave you in English!"));
        assert!(p.text.ends_with("should be organized into a numbered list."));
        assert_eq!(p.attachment.as_deref(), Some("scenes.pdf"));
    }

    #[test]
    fn prompt_text_only() {
        let p = build_prompt(&spec(3).text_only(true)).unwrap();
        assert_eq!(p.attachment, None);
        assert!(p.text.contains("image 2 - focal object: cup2; background object: table\n"));
        assert_ne!(p.digest, build_prompt(&spec(3)).unwrap().digest);
    }

    #[test]
    fn prompt_errors() {
        let mut s = spec(3);
        s.reference_labels.pop();
        assert!(matches!(build_prompt(&s), Err(ElicitError::LengthMismatch { labels: 2, scenes: 3 })));
        let mut s = spec(3);
        s.reference_labels[1] = "  ".into();
        assert!(matches!(build_prompt(&s), Err(ElicitError::MissingReferenceLabel { page: 2 })));
        let mut s = spec(3);
        s.target = s.reference.clone();
        assert!(matches!(build_prompt(&s), Err(ElicitError::SameLanguage(_))));
        assert!(matches!(
            ElicitationSpec::new(
                Language::from_code("zh").unwrap(),
                Language::from_code("en").unwrap(),
                vec!["on".into()],
                manifest(2),
                ProviderProfile::new("t", "u", "m")
            ),
            Err(ElicitError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn article_choice() {
        assert_eq!(indefinite_article("English"), "An");
        assert_eq!(indefinite_article("Chinese"), "A");
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_numbered_response("1) sur\n2) dans", 2).unwrap(), vec!["sur", "dans"]);
        assert_eq!(parse_numbered_response("1. on\n2. in", 2).unwrap(), vec!["on", "in"]);
        assert_eq!(parse_numbered_response("1: \"On\"\n\n2: 「里」\n", 2).unwrap(), vec!["on", "里"]);
        assert_eq!(
            parse_numbered_response("1) on\n2) in", 3).unwrap_err(),
            ParseError::CountMismatch { expected: 3, found: 2 }
        );
        assert_eq!(
            parse_numbered_response("1) on\n3) in", 2).unwrap_err(),
            ParseError::OutOfOrder { line: 2, expected: 2, found: 3 }
        );
        assert_eq!(
            parse_numbered_response("Sure!\n1) on", 1).unwrap_err(),
            ParseError::Unparseable { line: 1, content: "Sure!".into() }
        );
        assert_eq!(parse_numbered_response("1) \"\"", 1).unwrap_err(), ParseError::EmptyLabel { line: 1 });
    }

    #[test]
    fn cache_keys() {
        let s = spec(3);
        let p = build_prompt(&s).unwrap();
        assert_eq!(cache_key(&s, &p), cache_key(&spec(3), &build_prompt(&spec(3)).unwrap()));
        let warm = s.clone().with_temperature(0.7).unwrap();
        assert_ne!(cache_key(&s, &p), cache_key(&warm, &p));
        let mut other = s.clone();
        other.provider.model = "model-b".into();
        assert_ne!(cache_key(&s, &p), cache_key(&other, &p));
    }

    #[test]
    fn request_rendering() {
        let s = spec(2);
        let p = build_prompt(&s).unwrap();
        let body: Value = serde_json::from_slice(&render_request(&s, &p)).unwrap();
        assert_eq!(body["model"], "model-a");
        assert_eq!(body["temperature"], serde_json::json!(0.0));
        assert_eq!(body["messages"][0]["content"], Value::String(p.text.clone()));
        assert_eq!(body["attachment"], "scenes.pdf");
        let t = s.text_only(true);
        let body: Value = serde_json::from_slice(&render_request(&t, &build_prompt(&t).unwrap())).unwrap();
        assert_eq!(body["attachment"], Value::Null);
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let r = RetryPolicy::default();
        assert_eq!(r.delay_after(0), Duration::from_millis(500));
        assert_eq!(r.delay_after(2), Duration::from_millis(2000));
        assert_eq!(r.delay_after(10), Duration::from_millis(8000));
    }

    #[test]
    fn profile_defaults_from_json() {
        let p = ProviderProfile::from_json(br#"{"name":"x","base_url":"https://h/v1","model":"m"}"#).unwrap();
        assert_eq!(p.limits, RateLimits { max_in_flight: 4, min_interval_ms: 500 });
        assert_eq!(p.retry.max_attempts, 5);
        assert_eq!(p.response_pointer, "/choices/0/message/content");
        assert!(ProviderProfile::from_json(br#"{"name":"x","base_url":"","model":"m"}"#).is_err());
    }
}
