//! HTTP backends.
//!
//! Prompt expansion and text embedding speak the OpenAI-compatible
//! `chat/completions` and `embeddings` shapes. Video generation and video
//! embedding use a minimal JSON protocol:
//!
//! * generation: `POST {"prompt", "count", "seed"}` returns
//!   `{"videos": [{"id", "url"}, ...]}`;
//! * embedding: `POST {"video_id"}` returns `{"embedding": [...]}`.
//!
//! The API key, if any, is read from the environment variable named by
//! `credentials_env` and sent as a bearer token. It is never formatted into
//! errors or `Debug` output.

use std::sync::{Arc, OnceLock};
use std::time::Duration;

use serde_json::{json, Value};

use super::{
    bounded_map, content_key, BackendConfig, LatentPrompt, PromptExpander, RequestBudget,
    RetryPolicy, TextEmbedder, VideoEmbedder, VideoGenerator, VideoHandle,
};
use crate::embedding::{EmbeddingSource, EmbeddingVector};
use crate::error::{Error, Result};

pub const EXPANSION_TEMPLATE_VERSION: &str = "expand-v1";

/// Instruction sent as the system message; `{n}` is replaced by the count.
pub const EXPANSION_TEMPLATE: &str = "You rewrite a short video prompt into {n} fully specified video prompts. \
Each rewrite must be consistent with the original prompt, entailing everything it states, \
and add concrete detail about subjects, setting, motion, lighting and camera. \
Reply with a numbered list of exactly {n} items, one item per line, and nothing else.";

/// A raw HTTP response.
#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Sends one JSON POST. Connection failures map to
/// [`Error::BackendUnreachable`] or [`Error::Timeout`]; any HTTP status is a
/// successful transport.
pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpResponse>;
}

#[derive(Debug, Default)]
pub struct UreqTransport;

impl HttpTransport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpResponse> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = bearer {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let map_err = |e: ureq::Error| match e {
            ureq::Error::Timeout(t) => Error::Timeout(format!("{url}: {t}")),
            other => Error::BackendUnreachable(format!("{url}: {other}")),
        };
        let mut resp = req.send(body.to_string()).map_err(map_err)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(map_err)?;
        Ok(HttpResponse { status, body })
    }
}

/// A transport backed by a closure; handy for tests and offline replay.
pub struct FnTransport<F>(pub F);

impl<F> HttpTransport for FnTransport<F>
where
    F: Fn(&str, &Value) -> Result<HttpResponse> + Send + Sync,
{
    fn post_json(&self, url: &str, _bearer: Option<&str>, body: &Value, _timeout: Duration) -> Result<HttpResponse> {
        (self.0)(url, body)
    }
}

/// Shared request machinery for one configured endpoint.
#[derive(Clone)]
pub struct HttpClient {
    transport: Arc<dyn HttpTransport>,
    endpoint: String,
    model_name: Option<String>,
    api_key: Option<String>,
    timeout: Duration,
    retry: RetryPolicy,
    max_parallel: usize,
    budget: Arc<RequestBudget>,
}

impl std::fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpClient")
            .field("endpoint", &self.endpoint)
            .field("model_name", &self.model_name)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("timeout", &self.timeout)
            .field("max_parallel", &self.max_parallel)
            .finish()
    }
}

impl HttpClient {
    pub fn from_config(cfg: &BackendConfig, budget: Arc<RequestBudget>) -> Result<Self> {
        Self::with_transport(cfg, budget, Arc::new(UreqTransport))
    }

    pub fn with_transport(
        cfg: &BackendConfig,
        budget: Arc<RequestBudget>,
        transport: Arc<dyn HttpTransport>,
    ) -> Result<Self> {
        cfg.validate()?;
        let endpoint = cfg
            .endpoint
            .clone()
            .ok_or_else(|| Error::Config("http backend requires an endpoint".into()))?;
        let api_key = match &cfg.credentials_env {
            None => None,
            Some(name) => Some(std::env::var(name).map_err(|_| {
                Error::AuthFailure(format!("credential variable {name} is not set"))
            })?),
        };
        Ok(HttpClient {
            transport,
            endpoint,
            model_name: cfg.model_name.clone(),
            api_key,
            timeout: Duration::from_secs_f64(cfg.timeout),
            retry: cfg.retry.clone(),
            max_parallel: cfg.max_parallel,
            budget,
        })
    }

    pub fn identity(&self) -> String {
        match &self.model_name {
            Some(m) => format!("http:{}#{m}", self.endpoint),
            None => format!("http:{}", self.endpoint),
        }
    }

    /// POSTs `body`, retrying transient failures with exponential backoff.
    /// Returns the first non-transient response; 401/403 become
    /// [`Error::AuthFailure`].
    pub fn post(&self, body: &Value) -> Result<HttpResponse> {
        let mut attempt = 1;
        loop {
            self.budget.take()?;
            let outcome = self
                .transport
                .post_json(&self.endpoint, self.api_key.as_deref(), body, self.timeout)
                .and_then(|resp| match resp.status {
                    401 | 403 => Err(Error::AuthFailure(format!(
                        "{} rejected credentials (HTTP {})",
                        self.endpoint, resp.status
                    ))),
                    408 | 429 | 500..=599 => Err(Error::BackendUnreachable(format!(
                        "{} returned HTTP {}",
                        self.endpoint, resp.status
                    ))),
                    _ => Ok(resp),
                });
            match outcome {
                Err(e) if e.is_transient() && attempt < self.retry.max_attempts => {
                    let wait = self.retry.backoff_seconds * 2f64.powi(attempt as i32 - 1);
                    if wait > 0.0 {
                        std::thread::sleep(Duration::from_secs_f64(wait));
                    }
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    /// Like [`HttpClient::post`], requiring a 2xx JSON body.
    pub fn post_ok(&self, body: &Value) -> Result<Value> {
        let resp = self.post(body)?;
        if !(200..300).contains(&resp.status) {
            return Err(Error::MalformedResponse(format!(
                "{} returned HTTP {}",
                self.endpoint, resp.status
            )));
        }
        parse_json(&self.endpoint, &resp.body)
    }
}

fn parse_json(endpoint: &str, body: &str) -> Result<Value> {
    serde_json::from_str(body)
        .map_err(|e| Error::MalformedResponse(format!("{endpoint}: invalid JSON: {e}")))
}

fn parse_vector(endpoint: &str, v: Option<&Value>) -> Result<Vec<f64>> {
    let arr = v
        .and_then(Value::as_array)
        .ok_or_else(|| Error::MalformedResponse(format!("{endpoint}: missing embedding array")))?;
    arr.iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| Error::MalformedResponse(format!("{endpoint}: non-numeric embedding entry")))
        })
        .collect()
}

/// Extracts the items of a numbered list (`1.`, `2)`, ...), trimming
/// whitespace. Unnumbered lines continue the preceding item.
pub fn parse_numbered_list(text: &str) -> Vec<String> {
    let mut items: Vec<String> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let digits = line.chars().take_while(char::is_ascii_digit).count();
        let rest = &line[digits..];
        let numbered = digits > 0
            && (rest.starts_with('.') || rest.starts_with(')') || rest.starts_with(':'));
        if numbered {
            let item = rest[1..].trim();
            if !item.is_empty() {
                items.push(item.to_string());
            }
        } else if let Some(last) = items.last_mut() {
            last.push(' ');
            last.push_str(line);
        }
    }
    items
}

#[derive(Debug, Clone)]
pub struct HttpExpander {
    client: HttpClient,
    template: String,
    temperature: Option<f64>,
}

impl HttpExpander {
    pub fn new(client: HttpClient, cfg: &BackendConfig) -> Self {
        HttpExpander {
            client,
            template: cfg.expansion_template.clone().unwrap_or_else(|| EXPANSION_TEMPLATE.to_string()),
            temperature: cfg.temperature,
        }
    }

    pub fn request_body(&self, prompt: &str, count: usize, seed: u64) -> Value {
        let mut body = json!({
            "messages": [
                {"role": "system", "content": self.template.replace("{n}", &count.to_string())},
                {"role": "user", "content": prompt},
            ],
            "seed": seed,
        });
        if let Some(m) = &self.client.model_name {
            body["model"] = json!(m);
        }
        if let Some(t) = self.temperature {
            body["temperature"] = json!(t);
        }
        body
    }
}

impl PromptExpander for HttpExpander {
    fn identity(&self) -> String {
        let template = if self.template == EXPANSION_TEMPLATE {
            EXPANSION_TEMPLATE_VERSION.to_string()
        } else {
            format!("custom-{}", &content_key(&self.template)[..12])
        };
        format!("{}+{template}", self.client.identity())
    }

    fn expand(&self, prompt: &str, count: usize, seed: u64) -> Result<Vec<String>> {
        let endpoint = &self.client.endpoint;
        let resp = self.client.post_ok(&self.request_body(prompt, count, seed))?;
        let content = resp
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::MalformedResponse(format!("{endpoint}: no choices[0].message.content")))?;
        let mut items = parse_numbered_list(content);
        items.truncate(count);
        Ok(items)
    }
}

#[derive(Debug)]
pub struct HttpTextEmbedder {
    client: HttpClient,
    dim: OnceLock<usize>,
}

impl HttpTextEmbedder {
    pub fn new(client: HttpClient, _cfg: &BackendConfig) -> Self {
        HttpTextEmbedder {
            client,
            dim: OnceLock::new(),
        }
    }

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        let mut body = json!({"input": text});
        if let Some(m) = &self.client.model_name {
            body["model"] = json!(m);
        }
        let resp = self.client.post_ok(&body)?;
        let v = parse_vector(&self.client.endpoint, resp.pointer("/data/0/embedding"))?;
        let expected = *self.dim.get_or_init(|| v.len());
        if v.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: v.len() });
        }
        EmbeddingVector::new(v, EmbeddingSource::Text)
    }
}

impl TextEmbedder for HttpTextEmbedder {
    fn identity(&self) -> String {
        self.client.identity()
    }

    fn embed_text(&self, prompts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if prompts.is_empty() {
            return Err(Error::Domain("nothing to embed".into()));
        }
        bounded_map(prompts, self.client.max_parallel, |p| self.embed_one(p))
            .into_iter()
            .collect()
    }
}

#[derive(Debug)]
pub struct HttpVideoGenerator {
    client: HttpClient,
}

impl HttpVideoGenerator {
    pub fn new(client: HttpClient) -> Self {
        HttpVideoGenerator { client }
    }
}

impl VideoGenerator for HttpVideoGenerator {
    fn identity(&self) -> String {
        self.client.identity()
    }

    fn generate_videos(&self, latent: &LatentPrompt, count: usize, seed: u64) -> Result<Vec<VideoHandle>> {
        let endpoint = &self.client.endpoint;
        let resp = self.client.post(&json!({"prompt": latent.text, "count": count, "seed": seed}))?;
        match resp.status {
            200..=299 => {}
            400 | 422 | 451 => {
                return Err(Error::GenerationRefused(format!(
                    "{endpoint} refused latent {} (HTTP {})",
                    latent.id, resp.status
                )))
            }
            s => return Err(Error::MalformedResponse(format!("{endpoint} returned HTTP {s}"))),
        }
        let body = parse_json(endpoint, &resp.body)?;
        let videos = body
            .get("videos")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::MalformedResponse(format!("{endpoint}: missing videos array")))?;
        if videos.len() < count {
            return Err(Error::MalformedResponse(format!(
                "{endpoint}: {} videos returned, {count} requested",
                videos.len()
            )));
        }
        videos[..count]
            .iter()
            .map(|v| {
                let id = v.get("id").and_then(Value::as_str);
                let url = v.get("url").and_then(Value::as_str);
                match (id, url) {
                    (Some(id), Some(url)) => Ok(VideoHandle {
                        id: id.to_string(),
                        storage_ref: url.to_string(),
                        latent_id: latent.id.clone(),
                        embedding: None,
                    }),
                    _ => Err(Error::MalformedResponse(format!("{endpoint}: video entry needs id and url"))),
                }
            })
            .collect()
    }
}

#[derive(Debug)]
pub struct HttpVideoEmbedder {
    client: HttpClient,
    dim: OnceLock<usize>,
}

impl HttpVideoEmbedder {
    pub fn new(client: HttpClient) -> Self {
        HttpVideoEmbedder {
            client,
            dim: OnceLock::new(),
        }
    }
}

impl VideoEmbedder for HttpVideoEmbedder {
    fn identity(&self) -> String {
        self.client.identity()
    }

    fn embed_video(&self, handle: &VideoHandle) -> Result<EmbeddingVector> {
        let endpoint = &self.client.endpoint;
        let resp = self.client.post(&json!({"video_id": handle.id}))?;
        match resp.status {
            200..=299 => {}
            404 | 410 => return Err(Error::MissingVideo(handle.id.clone())),
            s => return Err(Error::MalformedResponse(format!("{endpoint} returned HTTP {s}"))),
        }
        let body = parse_json(endpoint, &resp.body)?;
        let v = parse_vector(endpoint, body.get("embedding"))?;
        let expected = *self.dim.get_or_init(|| v.len());
        if v.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: v.len() });
        }
        EmbeddingVector::new(v, EmbeddingSource::Video)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{expand_prompt, BackendKind};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    const GOLDEN_CHAT: &str = include_str!("../../tests/fixtures/chat_completion_numbered.json");

    fn http_config(endpoint: &str) -> BackendConfig {
        let mut cfg = BackendConfig::synthetic(Default::default());
        cfg.kind = BackendKind::Http;
        cfg.synthetic = None;
        cfg.endpoint = Some(endpoint.to_string());
        cfg.model_name = Some("test-model".into());
        cfg.retry.backoff_seconds = 0.0;
        cfg
    }

    fn ok(body: impl Into<String>) -> Result<HttpResponse> {
        Ok(HttpResponse { status: 200, body: body.into() })
    }

    fn client<F>(cfg: &BackendConfig, f: F) -> HttpClient
    where
        F: Fn(&str, &Value) -> Result<HttpResponse> + Send + Sync + 'static,
    {
        HttpClient::with_transport(cfg, Arc::new(RequestBudget::unlimited()), Arc::new(FnTransport(f))).unwrap()
    }

    #[test]
    fn golden_transcript_parses_exactly_n_items() {
        let cfg = http_config("http://llm.test/v1/chat/completions");
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        let expander = HttpExpander::new(
            client(&cfg, move |_, body| {
                log.lock().unwrap().push(body.clone());
                ok(GOLDEN_CHAT)
            }),
            &cfg,
        );
        let latents = expand_prompt(&expander, "a cat doing something", 5, 7).unwrap();
        let texts: Vec<&str> = latents.iter().map(|z| z.text.as_str()).collect();
        assert_eq!(
            texts,
            [
                "A tabby cat leaps onto a sunlit kitchen counter, slow-motion close-up.",
                "A black cat chases a red laser dot across a wooden floor, handheld camera.",
                "A grey kitten sleeps curled in a wicker basket by a rainy window, static shot.",
                "An orange cat stalks a pigeon on a city rooftop at dusk, telephoto lens.",
                "A white cat bats at falling snowflakes in a garden, shallow depth of field.",
            ]
        );
        let body = &seen.lock().unwrap()[0];
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["seed"], 7);
        assert_eq!(body["messages"][1]["content"], "a cat doing something");
        assert!(body["messages"][0]["content"].as_str().unwrap().contains("exactly 5 items"));
        assert!(expander.identity().ends_with(EXPANSION_TEMPLATE_VERSION));
    }

    #[test]
    fn numbered_list_parser() {
        let items = parse_numbered_list("Here you go:\n1.  first \n2) second\n   continued\n\n3: third\n");
        assert_eq!(items, ["first", "second continued", "third"]);
    }

    #[test]
    fn short_list_is_malformed() {
        let cfg = http_config("http://llm.test/v1/chat/completions");
        let expander = HttpExpander::new(
            client(&cfg, |_, _| ok(r#"{"choices":[{"message":{"content":"1. only one"}}]}"#)),
            &cfg,
        );
        let err = expand_prompt(&expander, "a cat", 3, 0).unwrap_err();
        assert!(matches!(err, Error::MalformedResponse(ref m) if m.contains("short by 2")));
    }

    #[test]
    fn embedding_fanout_respects_max_parallel() {
        let mut cfg = http_config("http://emb.test/v1/embeddings");
        cfg.max_parallel = 4;
        let inflight = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let (i2, p2) = (inflight.clone(), peak.clone());
        let embedder = HttpTextEmbedder::new(
            client(&cfg, move |_, body| {
                let now = i2.fetch_add(1, Ordering::SeqCst) + 1;
                p2.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(5));
                i2.fetch_sub(1, Ordering::SeqCst);
                let n = body["input"].as_str().unwrap().len() as f64;
                ok(json!({"data": [{"embedding": [n, 1.0, 0.0]}]}).to_string())
            }),
            &cfg,
        );
        let prompts: Vec<String> = (0..25).map(|i| "x".repeat(i + 1)).collect();
        let out = embedder.embed_text(&prompts).unwrap();
        assert_eq!(out.len(), 25);
        for (i, e) in out.iter().enumerate() {
            assert_eq!(e.components()[0], (i + 1) as f64);
        }
        let peak = peak.load(Ordering::SeqCst);
        assert!((2..=4).contains(&peak), "peak concurrency {peak}");
    }

    #[test]
    fn transient_failures_retried_then_succeed() {
        let cfg = http_config("http://emb.test/v1/embeddings");
        let calls = Arc::new(AtomicUsize::new(0));
        let c2 = calls.clone();
        let embedder = HttpTextEmbedder::new(
            client(&cfg, move |_, _| {
                if c2.fetch_add(1, Ordering::SeqCst) < 2 {
                    Ok(HttpResponse { status: 503, body: String::new() })
                } else {
                    ok(r#"{"data":[{"embedding":[0.0, 1.0]}]}"#)
                }
            }),
            &cfg,
        );
        let a = embedder.embed_text(&["p".into()]).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        assert_eq!(a[0].components(), &[0.0, 1.0]);
    }

    #[test]
    fn auth_failure_not_retried() {
        let cfg = http_config("http://emb.test/v1/embeddings");
        let calls = Arc::new(AtomicUsize::new(0));
        let c2 = calls.clone();
        let embedder = HttpTextEmbedder::new(
            client(&cfg, move |_, _| {
                c2.fetch_add(1, Ordering::SeqCst);
                Ok(HttpResponse { status: 401, body: String::new() })
            }),
            &cfg,
        );
        assert!(matches!(embedder.embed_text(&["p".into()]), Err(Error::AuthFailure(_))));
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn unreachable_after_retries() {
        let cfg = http_config("http://127.0.0.1:9/v1/embeddings");
        let embedder = HttpTextEmbedder::new(
            client(&cfg, |url, _| Err(Error::BackendUnreachable(url.to_string()))),
            &cfg,
        );
        assert!(matches!(embedder.embed_text(&["p".into()]), Err(Error::BackendUnreachable(_))));
    }

    #[test]
    fn budget_is_shared_and_enforced() {
        let cfg = http_config("http://emb.test/v1/embeddings");
        let budget = Arc::new(RequestBudget::new(Some(3)));
        let c = HttpClient::with_transport(
            &cfg,
            budget.clone(),
            Arc::new(FnTransport(|_: &str, _: &Value| ok(r#"{"data":[{"embedding":[1.0]}]}"#))),
        )
        .unwrap();
        let embedder = HttpTextEmbedder::new(c, &cfg);
        let prompts: Vec<String> = (0..5).map(|i| i.to_string()).collect();
        assert!(matches!(embedder.embed_text(&prompts), Err(Error::BudgetExhausted(3))));
        assert_eq!(budget.used(), 3);
    }

    #[test]
    fn credentials_read_from_named_variable_only_and_redacted() {
        let mut cfg = http_config("http://emb.test/v1/embeddings");
        cfg.credentials_env = Some("VMFUQ_TEST_KEY_UNSET_8c1f".into());
        let err = HttpClient::from_config(&cfg, Arc::new(RequestBudget::unlimited())).unwrap_err();
        assert!(matches!(err, Error::AuthFailure(_)));

        std::env::set_var("VMFUQ_TEST_KEY_SET_8c1f", "sk-secret-value");
        cfg.credentials_env = Some("VMFUQ_TEST_KEY_SET_8c1f".into());
        let c = HttpClient::from_config(&cfg, Arc::new(RequestBudget::unlimited())).unwrap();
        assert!(!format!("{c:?}").contains("sk-secret-value"));
        assert!(!serde_json::to_string(&cfg).unwrap().contains("sk-secret-value"));
    }

    #[test]
    fn video_protocol() {
        let cfg = http_config("http://video.test/generate");
        let gen = HttpVideoGenerator::new(client(&cfg, |_, body| {
            assert_eq!(body["count"], 2);
            assert_eq!(body["seed"], 11);
            if body["prompt"] == "forbidden" {
                return Ok(HttpResponse { status: 422, body: "{}".into() });
            }
            ok(r#"{"videos":[{"id":"a","url":"s3://x/a.mp4"},{"id":"b","url":"s3://x/b.mp4"}]}"#)
        }));
        let z = LatentPrompt::new(0, "a cat".into(), "cat").unwrap();
        let handles = gen.generate_videos(&z, 2, 11).unwrap();
        assert_eq!(handles[1].id, "b");
        assert_eq!(handles[1].storage_ref, "s3://x/b.mp4");
        let refused = LatentPrompt::new(1, "forbidden".into(), "cat").unwrap();
        assert!(matches!(gen.generate_videos(&refused, 2, 11), Err(Error::GenerationRefused(_))));

        let cfg = http_config("http://video.test/embed");
        let emb = HttpVideoEmbedder::new(client(&cfg, |_, body| match body["video_id"].as_str() {
            Some("a") => ok(r#"{"embedding":[0.6, 0.8]}"#),
            _ => Ok(HttpResponse { status: 404, body: String::new() }),
        }));
        assert_eq!(emb.embed_video(&handles[0]).unwrap().components(), &[0.6, 0.8]);
        assert!(matches!(emb.embed_video(&handles[1]), Err(Error::MissingVideo(ref id)) if id == "b"));
    }
}
