//! JSON-over-HTTP client for external inference servers. One client can act
//! as embedder, detector and feature encoder, depending on what the server
//! implements.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use privi_core::curation::{DetectionBox, Frame, Keyframe};
use privi_core::numerics::Tensor;
use privi_core::providers::{
    DetectorProvider, EmbeddingProvider, FeatureProvenance, FeatureProvider, MiniclipRef, TokenFeatures, TokenLayout,
};
use privi_core::Error as CoreError;
use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;
const EXCERPT_LEN: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpConfig {
    pub base_url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// First backoff delay; doubles with every retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    100
}
fn default_max_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            max_in_flight: default_max_in_flight(),
        }
    }
}

/// `GET /health` payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub dim: usize,
    #[serde(default)]
    pub layout: Option<TokenLayout>,
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Resolves a frame of a clip for feature requests.
pub type FrameFetcher = Arc<dyn Fn(&str, u64) -> privi_core::Result<Frame> + Send + Sync>;

pub struct HttpProvider {
    config: HttpConfig,
    agent: ureq::Agent,
    gate: Gate,
    health: Health,
    frames: Option<FrameFetcher>,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider").field("config", &self.config).field("health", &self.health).finish()
    }
}

fn excerpt(body: &str) -> String {
    let mut end = body.len().min(EXCERPT_LEN);
    while !body.is_char_boundary(end) {
        end -= 1;
    }
    let mut s = body[..end].to_string();
    if end < body.len() {
        s.push('…');
    }
    s
}

fn schema_error(endpoint: &str, what: &str, body: &str) -> CoreError {
    CoreError::ProviderSchema(format!("{endpoint}: {what}; payload: {}", excerpt(body)))
}

#[derive(Serialize)]
struct ImagePayload<'a> {
    image: String,
    width: u32,
    height: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt: Option<&'a str>,
}

impl<'a> ImagePayload<'a> {
    fn new(frame: &Frame, prompt: Option<&'a str>) -> Self {
        Self { image: B64.encode(&frame.rgb), width: frame.width, height: frame.height, prompt }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbedResponse {
    embedding: Vec<f32>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectResponse {
    boxes: Vec<DetectionBox>,
}

#[derive(Serialize)]
struct FeaturesRequest {
    frames: Vec<String>,
    width: u32,
    height: u32,
    crop: privi_core::providers::CropRect,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeaturesResponse {
    tokens: Vec<f32>,
    n: usize,
    d: usize,
}

impl HttpProvider {
    /// Connects and reads `/health`. Fails with `ProviderUnavailable` when the
    /// server cannot be reached.
    pub fn connect(config: HttpConfig) -> privi_core::Result<Self> {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_millis(config.timeout_ms)).build();
        let mut p = Self {
            gate: Gate::new(config.max_in_flight),
            config,
            agent,
            health: Health { dim: 0, layout: None },
            frames: None,
        };
        let body = p.call("health", None)?;
        p.health = serde_json::from_str(&body).map_err(|e| schema_error("/health", &e.to_string(), &body))?;
        Ok(p)
    }

    /// Supplies frame pixels for `/features` requests.
    pub fn with_frames(mut self, frames: FrameFetcher) -> Self {
        self.frames = Some(frames);
        self
    }

    pub fn health(&self) -> &Health {
        &self.health
    }

    fn url(&self, endpoint: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), endpoint)
    }

    /// Sends one request, retrying 5xx answers with exponential backoff.
    /// Returns the raw body of the successful response.
    fn call(&self, endpoint: &str, payload: Option<&serde_json::Value>) -> privi_core::Result<String> {
        let _permit = self.gate.acquire();
        let url = self.url(endpoint);
        let mut attempt = 0;
        loop {
            let result = match payload {
                Some(p) => self.agent.post(&url).send_json(p),
                None => self.agent.get(&url).call(),
            };
            match result {
                Ok(resp) => {
                    return resp
                        .into_string()
                        .map_err(|e| CoreError::ProviderUnavailable(format!("/{endpoint}: reading response: {e}")));
                }
                Err(ureq::Error::Status(code, resp)) if code >= 500 => {
                    if attempt >= self.config.retries {
                        let body = resp.into_string().unwrap_or_default();
                        return Err(CoreError::ProviderUnavailable(format!(
                            "/{endpoint}: HTTP {code} after {} retries: {}",
                            self.config.retries,
                            excerpt(&body)
                        )));
                    }
                    std::thread::sleep(Duration::from_millis(self.config.backoff_ms << attempt.min(16)));
                    attempt += 1;
                }
                Err(ureq::Error::Status(code, resp)) => {
                    let body = resp.into_string().unwrap_or_default();
                    return Err(schema_error(&format!("/{endpoint}"), &format!("HTTP {code}"), &body));
                }
                Err(ureq::Error::Transport(t)) => {
                    return Err(CoreError::ProviderUnavailable(format!("/{endpoint}: {t}")));
                }
            }
        }
    }

    fn post<T: for<'de> Deserialize<'de>>(&self, endpoint: &str, payload: &impl Serialize) -> privi_core::Result<(T, String)> {
        let value = serde_json::to_value(payload).expect("in-memory serialization");
        let body = self.call(endpoint, Some(&value))?;
        let parsed = serde_json::from_str(&body).map_err(|e| schema_error(&format!("/{endpoint}"), &e.to_string(), &body))?;
        Ok((parsed, body))
    }
}

impl EmbeddingProvider for HttpProvider {
    fn dim(&self) -> usize {
        self.health.dim
    }

    fn embed(&self, keyframe: &Keyframe) -> privi_core::Result<Vec<f32>> {
        let (r, body): (EmbedResponse, _) = self.post("embed", &ImagePayload::new(&keyframe.frame, None))?;
        if r.embedding.len() != self.health.dim {
            return Err(schema_error("/embed", &format!("embedding has {} values, expected {}", r.embedding.len(), self.health.dim), &body));
        }
        if r.embedding.iter().any(|v| !v.is_finite()) {
            return Err(schema_error("/embed", "non-finite embedding", &body));
        }
        Ok(r.embedding)
    }
}

impl DetectorProvider for HttpProvider {
    fn detect(&self, keyframe: &Keyframe, prompt: &str) -> privi_core::Result<Vec<DetectionBox>> {
        let (r, body): (DetectResponse, _) = self.post("detect", &ImagePayload::new(&keyframe.frame, Some(prompt)))?;
        let (w, h) = (keyframe.frame.width as f64, keyframe.frame.height as f64);
        for b in &r.boxes {
            if let Err(e) = b.validate(w, h) {
                return Err(schema_error("/detect", &e.to_string(), &body));
            }
        }
        Ok(r.boxes)
    }
}

impl FeatureProvider for HttpProvider {
    fn layout(&self) -> TokenLayout {
        self.health.layout.unwrap_or(TokenLayout::VIDEO_DEFAULT)
    }

    fn dim(&self) -> usize {
        self.health.dim
    }

    fn features(&self, clip: &MiniclipRef) -> privi_core::Result<TokenFeatures> {
        let fetch = self
            .frames
            .as_ref()
            .ok_or_else(|| CoreError::Contract("feature requests need a frame source".into()))?;
        let frames: Vec<Frame> = clip.frames.iter().map(|&i| fetch(&clip.clip_ref, i)).collect::<privi_core::Result<_>>()?;
        let (width, height) = frames.first().map(|f| (f.width, f.height)).unwrap_or((0, 0));
        let req = FeaturesRequest { frames: frames.iter().map(|f| B64.encode(&f.rgb)).collect(), width, height, crop: clip.crop };
        let (r, body): (FeaturesResponse, _) = self.post("features", &req)?;
        let n_expected = self.layout().tokens()?;
        if r.n != n_expected || r.d != self.health.dim || r.tokens.len() != r.n * r.d {
            return Err(schema_error(
                "/features",
                &format!("got n={} d={} with {} values, expected n={} d={}", r.n, r.d, r.tokens.len(), n_expected, self.health.dim),
                &body,
            ));
        }
        let tokens = Tensor::new(&[r.n, r.d], r.tokens.iter().map(|&v| v as f64).collect())?;
        TokenFeatures::new(tokens, FeatureProvenance { provider_id: self.config.base_url.clone(), clip_ref: clip.clip_ref.clone(), crop: clip.crop })
            .map_err(|e| schema_error("/features", &e.to_string(), &body))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn excerpt_is_bounded_and_char_safe() {
        let long = "é".repeat(300);
        let e = excerpt(&long);
        assert!(e.len() <= EXCERPT_LEN + '…'.len_utf8());
        assert!(e.ends_with('…'));
        assert_eq!(excerpt("short"), "short");
    }

    #[test]
    fn gate_bounds_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let gate = Arc::new(Gate::new(3));
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..12)
            .map(|_| {
                let (gate, live, peak) = (gate.clone(), live.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _p = gate.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 3);
    }
}
