//! HTTP adapters for the language/image roles, targeting OpenAI-compatible
//! endpoints. Calls render a role's prompt template, post a chat-completion
//! request, parse the reply's wire contract, and retry with exponential
//! backoff; failures surface as errors, never panics, so the agent loop can
//! fall back or abort the episode gracefully.
//!
//! The detector and encoder stay scene-backed even in remote mode: they stand
//! in for vision backbones that consume raw frames, which the desk-scale
//! simulator does not produce.

use super::*;
use crate::sim::{Scene, SimConfig};
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::sync::Mutex;
use std::time::Duration;

/// Connection settings for one OpenAI-compatible endpoint.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChatEndpointConfig {
    /// Base URL, e.g. `http://127.0.0.1:8080/v1`.
    pub base_url: String,
    /// Model identifier sent in each request body.
    pub model: String,
    /// Name of the environment variable holding the bearer token; unset or
    /// empty means no Authorization header.
    pub api_key_env: Option<String>,
    /// Per-request timeout in seconds.
    pub timeout_secs: u64,
    /// Total attempts per call (first try + retries).
    pub max_attempts: u32,
    /// Backoff before retry i is `initial_backoff_ms << (i-1)`.
    pub initial_backoff_ms: u64,
    /// Optional JSONL transcript of every request/response for replay.
    pub transcript_path: Option<std::path::PathBuf>,
}

impl Default for ChatEndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080/v1".into(),
            model: "default".into(),
            api_key_env: Some("NAVMEM_API_KEY".into()),
            timeout_secs: 30,
            max_attempts: 3,
            initial_backoff_ms: 250,
            transcript_path: None,
        }
    }
}

/// Blocking chat client shared by all remote roles. Reentrant: the underlying
/// connection pool supports concurrent in-flight requests, each with its own
/// timeout; only transcript appends serialize on a mutex.
pub struct HttpChatClient {
    config: ChatEndpointConfig,
    templates: PromptTemplates,
    http: reqwest::blocking::Client,
    api_key: Option<String>,
    transcript: Option<Mutex<std::fs::File>>,
}

impl HttpChatClient {
    pub fn new(config: ChatEndpointConfig, templates: PromptTemplates) -> Result<Self, InterfaceError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| InterfaceError::Fatal(format!("http client: {e}")))?;
        let api_key = config
            .api_key_env
            .as_deref()
            .filter(|name| !name.is_empty())
            .and_then(|name| std::env::var(name).ok())
            .filter(|v| !v.is_empty());
        let transcript = match &config.transcript_path {
            Some(path) => {
                let file = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| InterfaceError::Fatal(format!("transcript {}: {e}", path.display())))?;
                Some(Mutex::new(file))
            }
            None => None,
        };
        Ok(Self { config, templates, http, api_key, transcript })
    }

    pub fn templates(&self) -> &PromptTemplates {
        &self.templates
    }

    fn log(&self, role: &str, attempt: u32, request: &str, response: &Result<String, InterfaceError>) {
        let Some(t) = &self.transcript else { return };
        let record = serde_json::json!({
            "ts_ms": std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
            "role": role,
            "attempt": attempt,
            "request": request,
            "response": match response {
                Ok(text) => serde_json::json!({"ok": text}),
                Err(e) => serde_json::json!({"error": e.to_string()}),
            },
        });
        if let Ok(mut f) = t.lock() {
            let _ = writeln!(f, "{record}");
        }
    }

    fn post_json(&self, url: &str, body: &serde_json::Value) -> Result<serde_json::Value, InterfaceError> {
        let mut req = self.http.post(url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| InterfaceError::Unavailable(format!("transport: {e}")))?;
        let status = resp.status();
        if status.is_client_error() {
            return Err(InterfaceError::Fatal(format!("endpoint rejected request: {status}")));
        }
        if !status.is_success() {
            return Err(InterfaceError::Unavailable(format!("endpoint error: {status}")));
        }
        resp.json::<serde_json::Value>()
            .map_err(|e| InterfaceError::Parse(format!("response body: {e}")))
    }

    /// One chat round trip; no retries at this layer.
    fn chat_once(&self, prompt: &str) -> Result<String, InterfaceError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        let value = self.post_json(&url, &body)?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| InterfaceError::Parse("reply missing choices[0].message.content".into()))
    }

    /// Full call with retries: round trip plus contract parse, retried with
    /// exponential backoff on transport and parse failures alike. Fatal
    /// errors (4xx, bad local config) abort immediately.
    pub fn call<T>(
        &self,
        role: &str,
        prompt: &str,
        parse: impl Fn(&str) -> Result<T, InterfaceError>,
    ) -> Result<T, InterfaceError> {
        let mut last = InterfaceError::Unavailable("no attempts made".into());
        for attempt in 1..=self.config.max_attempts.max(1) {
            if attempt > 1 {
                let shift = (attempt - 2).min(16);
                std::thread::sleep(Duration::from_millis(self.config.initial_backoff_ms << shift));
            }
            let reply = self.chat_once(prompt);
            self.log(role, attempt, prompt, &reply);
            match reply {
                Ok(text) => match parse(&text) {
                    Ok(parsed) => return Ok(parsed),
                    Err(e @ InterfaceError::Fatal(_)) => return Err(e),
                    Err(e) => last = e,
                },
                Err(e @ InterfaceError::Fatal(_)) => return Err(e),
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    /// Image-generation round trip with the same retry policy; returns the
    /// URLs or base64 payloads the endpoint hands back, as external tokens.
    pub fn generate_images(&self, prompt: &str, count: usize) -> Result<Vec<ImageToken>, InterfaceError> {
        let url = format!("{}/images/generations", self.config.base_url.trim_end_matches('/'));
        let body = serde_json::json!({
            "model": self.config.model,
            "prompt": prompt,
            "n": count,
        });
        let mut last = InterfaceError::Unavailable("no attempts made".into());
        for attempt in 1..=self.config.max_attempts.max(1) {
            if attempt > 1 {
                let shift = (attempt - 2).min(16);
                std::thread::sleep(Duration::from_millis(self.config.initial_backoff_ms << shift));
            }
            let outcome = self.post_json(&url, &body).and_then(|value| {
                let items = value
                    .get("data")
                    .and_then(|d| d.as_array())
                    .ok_or_else(|| InterfaceError::Parse("reply missing data array".into()))?;
                let tokens: Vec<ImageToken> = items
                    .iter()
                    .filter_map(|item| {
                        item.get("url")
                            .or_else(|| item.get("b64_json"))
                            .and_then(|v| v.as_str())
                            .map(|s| ImageToken::External(s.to_string()))
                    })
                    .collect();
                if tokens.is_empty() {
                    Err(InterfaceError::Parse("no image payloads in reply".into()))
                } else {
                    Ok(tokens)
                }
            });
            self.log(
                "imaginer",
                attempt,
                prompt,
                &outcome.as_ref().map(|t| format!("{} image(s)", t.len())).map_err(Clone::clone),
            );
            match outcome {
                Ok(tokens) => return Ok(tokens),
                Err(e @ InterfaceError::Fatal(_)) => return Err(e),
                Err(e) => last = e,
            }
        }
        Err(last)
    }
}

fn observation_summary(obs: &SimObservation) -> String {
    if obs.detections.is_empty() {
        return "No objects detected in the current view.".to_string();
    }
    obs.detections
        .iter()
        .map(|d| {
            format!(
                "- {} at image ({:.0}, {:.0}), {:.2} m away, confidence {:.2}",
                d.category, d.center.0, d.center.1, d.depth, d.confidence
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn memory_summary(store: &LandmarkStore) -> String {
    if store.landmarks().is_empty() {
        return "(no landmarks recorded yet)".to_string();
    }
    store
        .landmarks()
        .iter()
        .map(|lm| {
            format!(
                "- {} at [{:.2}, {:.2}, {:.2}] (confidence {:.2}): {}",
                lm.category, lm.position[0], lm.position[1], lm.position[2], lm.confidence, lm.description
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Remote landmark retrieval, instruction decomposition, and EQA waypoint
/// selection over one chat endpoint.
pub struct RemoteReasoner {
    pub client: Arc<HttpChatClient>,
}

impl Reasoner for RemoteReasoner {
    fn locate_landmarks(
        &self,
        goal_text: &str,
        store: &LandmarkStore,
        k: usize,
    ) -> Result<Vec<LandmarkCandidate>, InterfaceError> {
        let prompt = render_template(
            &self.client.templates().landmark_retrieval,
            &[("goal", goal_text), ("memory", &memory_summary(store)), ("k", &k.to_string())],
        );
        self.client.call("reasoner.locate", &prompt, |reply| {
            let locs = parse_nav_locs(reply);
            // Preserve the model's ranking as a gently decreasing prior.
            Ok(locs
                .into_iter()
                .take(k)
                .enumerate()
                .map(|(i, position)| LandmarkCandidate {
                    position,
                    confidence: (1.0 - 0.05 * i as f64).max(0.5),
                })
                .collect())
        })
    }

    fn decompose_instruction(&self, instruction: &str) -> Result<Vec<String>, InterfaceError> {
        let prompt = render_template(
            &self.client.templates().instruction_decomposition,
            &[("instruction", instruction)],
        );
        self.client.call("reasoner.decompose", &prompt, |reply| {
            let wps = parse_waypoints(reply);
            if wps.is_empty() {
                Err(InterfaceError::Parse(format!("no waypoint lines in reply: {reply:.80}")))
            } else {
                Ok(wps)
            }
        })
    }

    fn eqa_waypoint(&self, question: &str) -> Result<String, InterfaceError> {
        let prompt =
            render_template(&self.client.templates().eqa_waypoint, &[("question", question)]);
        self.client.call("reasoner.eqa", &prompt, |reply| {
            let line = reply.lines().map(str::trim).find(|l| !l.is_empty());
            match line {
                Some(l) => Ok(l.to_string()),
                None => Err(InterfaceError::Parse("empty reply".into())),
            }
        })
    }
}

/// Remote goal/description enrichment and detection captioning.
pub struct RemoteEnricher {
    pub client: Arc<HttpChatClient>,
}

impl DescriptionEnricher for RemoteEnricher {
    fn enrich(&self, goal_text: &str) -> Result<String, InterfaceError> {
        let prompt =
            render_template(&self.client.templates().association_enrichment, &[("goal", goal_text)]);
        self.client.call("enricher.enrich", &prompt, parse_enrichment)
    }

    fn describe(&self, obs: &SimObservation, det: &Detection) -> Result<String, InterfaceError> {
        let context = observation_summary(obs);
        let prompt = render_template(
            &self.client.templates().detection_description,
            &[("category", &det.category), ("context", &context)],
        );
        self.client.call("enricher.describe", &prompt, |reply| {
            let line = reply.lines().map(str::trim).find(|l| !l.is_empty());
            match line {
                Some(l) => Ok(l.to_string()),
                None => Err(InterfaceError::Parse("empty reply".into())),
            }
        })
    }
}

/// Remote goal verification from a textual view summary.
pub struct RemoteVerifier {
    pub client: Arc<HttpChatClient>,
}

impl GoalVerifier for RemoteVerifier {
    fn verify(&self, obs: &SimObservation, goal: &GoalSpec) -> Result<VerifyOutcome, InterfaceError> {
        let prompt = render_template(
            &self.client.templates().goal_verification,
            &[("goal", &goal.display()), ("observation", &observation_summary(obs))],
        );
        self.client.call("verifier", &prompt, |reply| {
            let success = parse_yes_no(reply, "success")?;
            let need_forward = parse_yes_no(reply, "need forward").unwrap_or(false);
            Ok(VerifyOutcome { success, need_forward, analysis: reply.trim().to_string() })
        })
    }
}

/// Remote answer judging on the 1-5 scale.
pub struct RemoteScorer {
    pub client: Arc<HttpChatClient>,
}

impl AnswerScorer for RemoteScorer {
    fn score(&self, question: &str, answer: &str, reference: &str) -> Result<u8, InterfaceError> {
        let prompt = render_template(
            &self.client.templates().answer_scoring,
            &[("question", question), ("answer", answer), ("reference", reference)],
        );
        self.client.call("scorer", &prompt, parse_score)
    }
}

/// Remote image generation; yields external tokens that a real encoder could
/// download and embed.
pub struct RemoteImaginer {
    pub client: Arc<HttpChatClient>,
}

impl ImageImaginer for RemoteImaginer {
    fn imagine(&self, description: &str, count: usize) -> Result<Vec<ImageToken>, InterfaceError> {
        self.client.generate_images(description, count.max(1))
    }
}

/// Builds an interface set with remote language/image roles and scene-backed
/// detector + encoder (see module docs for why those two stay local).
pub fn remote_interfaces(
    scene: std::sync::Arc<Scene>,
    sim_config: &SimConfig,
    endpoint: ChatEndpointConfig,
    templates: PromptTemplates,
    seed: u64,
) -> Result<InterfaceSet, InterfaceError> {
    use super::mocks::{MockDetector, MockEncoder};
    let client = Arc::new(HttpChatClient::new(endpoint, templates)?);
    let _ = sim_config;
    Ok(InterfaceSet {
        detector: Arc::new(MockDetector),
        encoder: Arc::new(MockEncoder::new(scene, seed)),
        enricher: Arc::new(RemoteEnricher { client: client.clone() }),
        imaginer: Arc::new(RemoteImaginer { client: client.clone() }),
        verifier: Arc::new(RemoteVerifier { client: client.clone() }),
        scorer: Arc::new(RemoteScorer { client: client.clone() }),
        reasoner: Arc::new(RemoteReasoner { client }),
    })
}
