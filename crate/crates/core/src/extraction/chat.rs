//! Chat-completion clients: live HTTP, replay from fixtures, and recording.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_CHAT_URL: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_CHAT_MODEL: &str = "gpt-4o";
pub const API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub top_logprobs: u32,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    /// A greedy request (`temperature` 0, `top_logprobs` 0).
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        ChatRequest {
            model: model.into(),
            temperature: 0.0,
            top_logprobs: 0,
            messages,
        }
    }

    /// Hex sha256 of the serialized request; the replay lookup key.
    pub fn hash(&self) -> String {
        let body = serde_json::to_string(self).expect("request serializes");
        hex::encode(Sha256::digest(body.as_bytes()))
    }
}

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("missing API key (set {0})")]
    MissingKey(&'static str),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("chat service returned {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed chat response: {0}")]
    Malformed(String),
    #[error("no recorded response for request {0}")]
    ReplayMiss(String),
    #[error("replay fixture: {0}")]
    Fixture(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError>;
}

impl<T: ChatClient + ?Sized> ChatClient for &T {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        (**self).complete(request)
    }
}

impl<T: ChatClient + ?Sized> ChatClient for Box<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        (**self).complete(request)
    }
}

/// OpenAI-compatible chat-completions client.
pub struct HttpChatClient {
    url: String,
    api_key: String,
    http: reqwest::blocking::Client,
    max_retries: u32,
}

impl HttpChatClient {
    pub fn new(url: impl Into<String>, api_key: impl Into<String>) -> Result<Self, ChatError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| ChatError::Transport(e.to_string()))?;
        Ok(HttpChatClient {
            url: url.into(),
            api_key: api_key.into(),
            http,
            max_retries: 5,
        })
    }

    /// Reads the key from `OPENAI_API_KEY`.
    pub fn from_env(url: impl Into<String>) -> Result<Self, ChatError> {
        let key = std::env::var(API_KEY_ENV).map_err(|_| ChatError::MissingKey(API_KEY_ENV))?;
        Self::new(url, key)
    }

    fn send_once(&self, request: &ChatRequest) -> Result<String, ChatError> {
        let resp = self
            .http
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .json(request)
            .send()
            .map_err(|e| ChatError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| ChatError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ChatError::Status {
                status: status.as_u16(),
                body,
            });
        }
        let v: serde_json::Value =
            serde_json::from_str(&body).map_err(|e| ChatError::Malformed(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(String::from)
            .ok_or_else(|| ChatError::Malformed("no choices[0].message.content".into()))
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        let mut attempt = 0;
        loop {
            match self.send_once(request) {
                Err(ChatError::Status { status, .. })
                    if (status == 429 || status >= 500) && attempt < self.max_retries =>
                {
                    std::thread::sleep(Duration::from_millis(1000 << attempt));
                    attempt += 1;
                }
                Err(ChatError::Transport(e)) if attempt < self.max_retries => {
                    log::warn!("chat transport error, retrying: {e}");
                    std::thread::sleep(Duration::from_millis(1000 << attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// One line of a replay fixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub request_hash: String,
    pub response_text: String,
}

/// Answers from recorded `{request_hash, response_text}` lines; never touches
/// the network.
#[derive(Debug, Default)]
pub struct ReplayChatClient {
    responses: HashMap<String, String>,
}

impl ReplayChatClient {
    pub fn from_records(records: impl IntoIterator<Item = ReplayRecord>) -> Self {
        ReplayChatClient {
            responses: records
                .into_iter()
                .map(|r| (r.request_hash, r.response_text))
                .collect(),
        }
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self, ChatError> {
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReplayRecord = serde_json::from_str(&line)
                .map_err(|e| ChatError::Fixture(format!("line {}: {e}", i + 1)))?;
            records.push(rec);
        }
        Ok(Self::from_records(records))
    }

    pub fn open(path: &Path) -> Result<Self, ChatError> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ChatClient for ReplayChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        let hash = request.hash();
        self.responses
            .get(&hash)
            .cloned()
            .ok_or(ChatError::ReplayMiss(hash))
    }
}

/// Forwards to an inner client and appends every successful exchange to a
/// replay fixture.
pub struct RecordingChatClient<C> {
    inner: C,
    sink: Mutex<File>,
}

impl<C: ChatClient> RecordingChatClient<C> {
    pub fn new(inner: C, path: &Path) -> Result<Self, ChatError> {
        let sink = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RecordingChatClient {
            inner,
            sink: Mutex::new(sink),
        })
    }
}

impl<C: ChatClient> ChatClient for RecordingChatClient<C> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        let text = self.inner.complete(request)?;
        let rec = ReplayRecord {
            request_hash: request.hash(),
            response_text: text.clone(),
        };
        let mut line = serde_json::to_string(&rec).expect("record serializes");
        line.push('\n');
        let mut sink = self.sink.lock().unwrap_or_else(|e| e.into_inner());
        sink.write_all(line.as_bytes())?;
        Ok(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo;
    impl ChatClient for Echo {
        fn complete(&self, r: &ChatRequest) -> Result<String, ChatError> {
            Ok(r.messages.last().unwrap().content.to_uppercase())
        }
    }

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new("m", vec![ChatMessage::system("s"), ChatMessage::user(text)])
    }

    #[test]
    fn request_wire_shape() {
        let v = serde_json::to_value(req("hi")).unwrap();
        assert_eq!(v["temperature"], 0.0);
        assert_eq!(v["top_logprobs"], 0);
        assert_eq!(v["messages"][0]["role"], "system");
        assert_eq!(v["messages"][1]["content"], "hi");
    }

    #[test]
    fn hash_depends_on_content() {
        assert_eq!(req("a").hash(), req("a").hash());
        assert_ne!(req("a").hash(), req("b").hash());
        assert_eq!(req("a").hash().len(), 64);
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replay.jsonl");
        let rec = RecordingChatClient::new(Echo, &path).unwrap();
        assert_eq!(rec.complete(&req("abc")).unwrap(), "ABC");
        drop(rec);
        let replay = ReplayChatClient::open(&path).unwrap();
        assert_eq!(replay.len(), 1);
        assert_eq!(replay.complete(&req("abc")).unwrap(), "ABC");
        assert!(matches!(
            replay.complete(&req("zzz")),
            Err(ChatError::ReplayMiss(_))
        ));
    }

    #[test]
    fn bad_fixture_line_is_reported() {
        let err = ReplayChatClient::from_reader("{}\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }
}
