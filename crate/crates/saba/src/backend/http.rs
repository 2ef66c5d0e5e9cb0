//! Provider speaking the OpenAI-style chat-completions and embeddings wire
//! format.
//!
//! Chat request: `POST {base_url}/chat/completions` with
//! `{"model", "temperature", "messages": [{"role": "user", "content": prompt}]}`.
//! The reply text is `choices[0].message.content`; token usage is read from
//! `usage.prompt_tokens` / `usage.completion_tokens` when present.
//!
//! HTTP 408, 429 and 5xx and transport errors are reported as transient so the
//! gateway retries them; other statuses are fatal.

use std::time::{Duration, Instant};

use saba_core::embedding::{Embedder, EmbeddingVector};
use saba_core::model::{BackendError, Completion, LanguageModel, ModelRequest, Usage};
use serde::{Deserialize, Serialize};
use serde_json::json;
use ureq::Agent;

pub const DEFAULT_TOKEN_ENV: &str = "SABA_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    pub embedding_model: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: String,
    pub timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            embedding_model: "text-embedding-3-small".into(),
            token_env: DEFAULT_TOKEN_ENV.into(),
            timeout_secs: 120,
        }
    }
}

struct Client {
    agent: Agent,
    base_url: String,
    token: Option<String>,
}

impl Client {
    fn new(config: &HttpConfig) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            base_url: config.base_url.trim_end_matches('/').to_string(),
            token: std::env::var(&config.token_env)
                .ok()
                .filter(|t| !t.is_empty()),
        }
    }

    fn post(&self, path: &str, body: serde_json::Value) -> Result<serde_json::Value, BackendError> {
        let url = format!("{}/{path}", self.base_url);
        let mut req = self
            .agent
            .post(&url)
            .header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| BackendError::Transient(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transient(format!("{url}: reading body: {e}")))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| BackendError::Unavailable(format!("{url}: malformed JSON body: {e}"))),
            408 | 429 | 500..=599 => Err(BackendError::Transient(format!("{url}: HTTP {status}"))),
            _ => Err(BackendError::Unavailable(format!(
                "{url}: HTTP {status}: {}",
                snippet(&text)
            ))),
        }
    }
}

fn snippet(text: &str) -> &str {
    match text.char_indices().nth(200) {
        Some((i, _)) => &text[..i],
        None => text,
    }
}

pub struct HttpModel {
    client: Client,
    model: String,
}

impl HttpModel {
    pub fn new(config: &HttpConfig) -> Self {
        Self {
            client: Client::new(config),
            model: config.model.clone(),
        }
    }
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

impl LanguageModel for HttpModel {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn complete(&self, r: &ModelRequest) -> Result<Completion, BackendError> {
        let started = Instant::now();
        let body = json!({
            "model": self.model,
            "temperature": r.temperature,
            "messages": [{"role": "user", "content": r.rendered_prompt}],
        });
        let value = self.client.post("chat/completions", body)?;
        let reply: ChatReply = serde_json::from_value(value)
            .map_err(|e| BackendError::Unavailable(format!("unexpected chat reply shape: {e}")))?;
        let text = reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Unavailable("chat reply has no content".into()))?;
        Ok(Completion {
            text,
            usage: reply.usage,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

/// `POST {base_url}/embeddings` with `{"model", "input": [texts]}`.
pub struct HttpEmbedder {
    client: Client,
    model: String,
}

impl HttpEmbedder {
    pub fn new(config: &HttpConfig) -> Self {
        Self {
            client: Client::new(config),
            model: config.embedding_model.clone(),
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingReply {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

impl Embedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, BackendError> {
        if texts.is_empty() || texts.iter().any(|t| t.trim().is_empty()) {
            return Err(BackendError::InvalidInput(
                "embedding batch is empty or has blank text".into(),
            ));
        }
        let value = self
            .client
            .post("embeddings", json!({"model": self.model, "input": texts}))?;
        let mut reply: EmbeddingReply = serde_json::from_value(value).map_err(|e| {
            BackendError::Unavailable(format!("unexpected embedding reply shape: {e}"))
        })?;
        if reply.data.len() != texts.len() {
            return Err(BackendError::Unavailable(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                reply.data.len()
            )));
        }
        reply.data.sort_by_key(|d| d.index);
        let dim = reply.data[0].embedding.len();
        if reply.data.iter().any(|d| d.embedding.len() != dim) {
            return Err(BackendError::Unavailable(
                "embedding dimensions differ within a batch".into(),
            ));
        }
        Ok(reply
            .data
            .into_iter()
            .map(|d| EmbeddingVector::from_raw(d.embedding))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use saba_core::model::{Gateway, PromptKind};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::thread;

    /// Serves one canned response per connection, in order.
    fn serve(responses: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (format!("http://{addr}/v1"), handle)
    }

    fn config(base_url: String) -> HttpConfig {
        HttpConfig {
            base_url,
            model: "m".into(),
            token_env: "SABA_TEST_TOKEN_UNSET".into(),
            timeout_secs: 5,
            ..HttpConfig::default()
        }
    }

    #[test]
    fn retries_rate_limits_then_succeeds() {
        let ok = r#"{"choices":[{"message":{"content":"{\"obstacles\":[]}"}}],"usage":{"prompt_tokens":12,"completion_tokens":3}}"#;
        let (url, server) = serve(vec![
            (429, "{}".into()),
            (429, "{}".into()),
            (200, ok.into()),
        ]);
        let model = HttpModel::new(&config(url));
        let gw = Gateway::new(&model);
        let resp = gw
            .call(PromptKind::Aware, "prompt".into(), "c", 0, None, |raw| {
                serde_json::from_str::<serde_json::Value>(raw).map_err(|e| e.to_string())
            })
            .unwrap();
        assert_eq!(resp.attempts, 3);
        assert_eq!((resp.prompt_tokens, resp.completion_tokens), (12, 3));
        let bodies = server.join().unwrap();
        assert_eq!(bodies.len(), 3);
        let sent: serde_json::Value = serde_json::from_str(&bodies[2]).unwrap();
        assert_eq!(sent["temperature"], 0.0);
        assert_eq!(sent["messages"][0]["content"], "prompt");
    }

    #[test]
    fn client_errors_are_fatal() {
        let (url, server) = serve(vec![(401, r#"{"error":"no"}"#.into())]);
        let model = HttpModel::new(&config(url));
        let err = Gateway::new(&model)
            .call(PromptKind::Aware, "p".into(), "c", 0, None, |_| Ok(()))
            .unwrap_err();
        assert!(err.to_string().contains("401"), "{err}");
        server.join().unwrap();
    }

    #[test]
    fn embeddings_are_normalized_and_ordered() {
        let body = r#"{"data":[{"index":1,"embedding":[0,2]},{"index":0,"embedding":[3,4]}]}"#;
        let (url, server) = serve(vec![(200, body.into())]);
        let e = HttpEmbedder::new(&config(url));
        let vs = e.embed_batch(&["a", "b"]).unwrap();
        assert_eq!(vs[0].as_slice(), &[0.6, 0.8]);
        assert_eq!(vs[1].as_slice(), &[0.0, 1.0]);
        server.join().unwrap();
        assert!(e.embed_batch(&[]).is_err());
    }
}
