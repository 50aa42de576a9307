//! LLM client interface with a live chat-completion client and an offline stub.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ForgeError, Result};
use crate::text::Tier;

/// What a request is for; the stub keys its behaviour off this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Explanation(Tier),
    Density,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub system: String,
    pub user: String,
    pub kind: RequestKind,
    /// The reply must be a JSON object.
    pub json: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmResponse {
    pub raw: String,
    pub parsed: Option<Value>,
    pub latency: Duration,
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse>;
}

/// Extracts the outermost `{...}` of a reply, tolerating prose or code fences around it.
pub fn parse_json_body(raw: &str) -> Option<Value> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    if end < start {
        return None;
    }
    serde_json::from_str(&raw[start..=end]).ok()
}

/// OpenAI-compatible `/chat/completions` client.
pub struct HttpClient {
    pub base_url: String,
    pub model: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpClient {
    pub const ENV_URL: &'static str = "ADIFF_LLM_BASE_URL";
    pub const ENV_MODEL: &'static str = "ADIFF_LLM_MODEL";
    pub const ENV_KEY: &'static str = "ADIFF_LLM_API_KEY";

    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| ForgeError::Config(e.to_string()))?;
        Ok(Self { base_url: base_url.into().trim_end_matches('/').to_string(), model: model.into(), api_key, http })
    }

    /// Reads the endpoint, model and optional key from the environment.
    pub fn from_env() -> Result<Self> {
        let get = |k: &str| std::env::var(k).map_err(|_| ForgeError::Config(format!("{k} is not set")));
        Self::new(get(Self::ENV_URL)?, get(Self::ENV_MODEL)?, std::env::var(Self::ENV_KEY).ok())
    }
}

impl LlmClient for HttpClient {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse> {
        let mut body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
        });
        if request.json {
            body["response_format"] = json!({"type": "json_object"});
        }
        let started = Instant::now();
        let mut req = self.http.post(format!("{}/chat/completions", self.base_url)).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ForgeError::Client(e.to_string()))?;
        let status = resp.status();
        let payload: Value = resp.json().map_err(|e| ForgeError::Client(e.to_string()))?;
        if !status.is_success() {
            return Err(ForgeError::Client(format!("HTTP {status}: {payload}")));
        }
        let raw = payload["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| ForgeError::Client(format!("no message content in {payload}")))?
            .to_string();
        let parsed = if request.json { parse_json_body(&raw) } else { None };
        Ok(LlmResponse { raw, parsed, latency: started.elapsed() })
    }
}

/// Offline client with templated, seed-deterministic replies.
#[derive(Debug, Clone, Default)]
pub struct StubClient {
    pub seed: u64,
}

const CONNECTIVES: [&str; 3] = ["while", "whereas", "but"];
const QUALITIES: [&str; 4] = [
    "The first sound is brighter and sits higher in pitch",
    "The first recording feels closer and drier",
    "The first source is steadier in loudness",
    "The first clip has a sharper attack",
];

fn fnv(text: &str, seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for b in text.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Pulls the two caption lines out of a generation request.
fn captions(user: &str) -> (String, String) {
    let grab = |label: &str| {
        user.lines()
            .find_map(|l| l.strip_prefix(label))
            .map(|s| s.trim().trim_end_matches('.').to_string())
            .unwrap_or_default()
    };
    (grab(super::CAPTION1_LABEL), grab(super::CAPTION2_LABEL))
}

impl StubClient {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn explanation(&self, tier: Tier, user: &str) -> String {
        let (a, b) = captions(user);
        let h = fnv(user, self.seed);
        let conj = CONNECTIVES[(h % 3) as usize];
        match tier {
            Tier::One => format!("The first audio has {a}, {conj} the second audio has {b}."),
            Tier::Two => format!(
                "The first audio has {a}, {conj} the second audio has {b}. \
                 In the first audio the sounds unfold in one continuous sequence. \
                 The second audio follows a different order of events."
            ),
            Tier::Three => format!(
                "The first audio has {a}, {conj} the second audio has {b}. \
                 {}. The second recording sounds more distant and reverberant, with a darker tone. \
                 Loudness in the first clip stays even, while the second clip rises and falls. \
                 Together these differences in pitch, timbre and space give the two recordings a distinct character.",
                QUALITIES[((h >> 8) % 4) as usize]
            ),
        }
    }

    /// Monotone in length: longer explanations earn higher scores.
    fn density(&self, user: &str) -> u8 {
        let body = user.rsplit(super::EXPLANATION_LABEL).next().unwrap_or(user);
        let words = body.split_whitespace().count();
        (1 + words / 20).clamp(1, 5) as u8
    }
}

impl LlmClient for StubClient {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse> {
        let raw = match request.kind {
            RequestKind::Explanation(tier) => self.explanation(tier, &request.user),
            RequestKind::Density => format!("{{\"score\": {}}}", self.density(&request.user)),
        };
        let parsed = if request.json { parse_json_body(&raw) } else { None };
        Ok(LlmResponse { raw, parsed, latency: Duration::ZERO })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_body_inside_prose() {
        assert_eq!(parse_json_body("Sure!\n```json\n{\"score\": 4}\n```"), Some(json!({"score": 4})));
        assert_eq!(parse_json_body("no json"), None);
        assert_eq!(parse_json_body("} {"), None);
    }

    #[test]
    fn live_client_needs_env() {
        if std::env::var(HttpClient::ENV_URL).is_err() {
            assert!(matches!(HttpClient::from_env(), Err(ForgeError::Config(_))));
        }
    }
}
