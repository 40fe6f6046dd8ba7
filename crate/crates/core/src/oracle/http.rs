use std::time::Duration;

use serde_json::Value;

use super::protocol::{
    chat_completion_body, decode_envelope, embedding_body, encode_envelope, parse_chat_completion,
    parse_embedding, ProtocolStyle,
};
use super::{BackendError, BackendReply, OracleBackend, OracleKind, OracleRequest, Payload};

/// JSON-over-HTTP oracle backend.
pub struct HttpBackend {
    base_url: String,
    style: ProtocolStyle,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(
        base_url: impl Into<String>,
        style: ProtocolStyle,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            style,
            api_key,
            agent,
        }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let url = format!("{}{}", self.base_url, path);
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| BackendError::Unreachable(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transient(format!("{url}: reading body: {e}")))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| BackendError::Rejected(format!("{url}: {e}"))),
            429 | 500..=599 => Err(BackendError::Transient(format!("{url}: HTTP {status}"))),
            _ => Err(BackendError::Rejected(format!(
                "{url}: HTTP {status}: {text}"
            ))),
        }
    }
}

impl OracleBackend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn call(&self, request: &OracleRequest) -> Result<BackendReply, BackendError> {
        match &self.style {
            ProtocolStyle::Oracle => {
                decode_envelope(self.post("/oracle", &encode_envelope(request))?)
            }
            ProtocolStyle::ChatCompletion {
                chat_model,
                embed_model,
            } => match (&request.payload, request.kind()) {
                (Payload::Embed { text }, OracleKind::Embed) => {
                    parse_embedding(self.post("/embeddings", &embedding_body(text, embed_model))?)
                }
                _ => parse_chat_completion(self.post(
                    "/chat/completions",
                    &chat_completion_body(request, chat_model),
                )?),
            },
        }
    }
}
