//! Wire formats for remote oracle backends.
//!
//! The native protocol is `POST /oracle` with
//! `{kind, payload, schema_version, call_site, attempt}` answered by
//! `{ok, result | error, usage?, retryable?}`. For OpenAI-style servers the
//! same requests are mapped onto `/chat/completions` (prompt per kind, JSON
//! reply) and `/embeddings`.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, BackendReply, OracleKind, OracleRequest, Payload, TokenUsage};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "style", rename_all = "snake_case")]
pub enum ProtocolStyle {
    /// Native `POST /oracle` envelope.
    Oracle,
    /// `/chat/completions` plus `/embeddings`.
    ChatCompletion {
        chat_model: String,
        embed_model: String,
    },
}

const REFUSAL_NOTE: &str =
    "If you cannot do this, reply {\"refusal\": \"<reason>\"}. Reply with JSON only.";

pub fn prompt_for(kind: OracleKind) -> &'static str {
    match kind {
        OracleKind::Embed => include_str!("../../prompts/embed.txt"),
        OracleKind::KeywordExtract => include_str!("../../prompts/keyword_extract.txt"),
        OracleKind::SynonymJudge => include_str!("../../prompts/synonym_judge.txt"),
        OracleKind::PlanPropose => include_str!("../../prompts/plan_propose.txt"),
        OracleKind::PlanRefine => include_str!("../../prompts/plan_refine.txt"),
        OracleKind::EntityScore => include_str!("../../prompts/entity_score.txt"),
        OracleKind::DirectionSelect => include_str!("../../prompts/direction_select.txt"),
        OracleKind::PathSelect => include_str!("../../prompts/path_select.txt"),
        OracleKind::StepAnswer => include_str!("../../prompts/step_answer.txt"),
        OracleKind::CandidateAnswer => include_str!("../../prompts/candidate_answer.txt"),
        OracleKind::FinalJudge => include_str!("../../prompts/final_judge.txt"),
    }
}

pub fn encode_envelope(request: &OracleRequest) -> Value {
    let mut v = serde_json::to_value(request).expect("request serializes");
    v["schema_version"] = json!(SCHEMA_VERSION);
    v
}

#[derive(Deserialize)]
struct Envelope {
    ok: bool,
    #[serde(default)]
    result: Option<Value>,
    #[serde(default)]
    error: Option<String>,
    #[serde(default)]
    usage: Option<TokenUsage>,
    #[serde(default)]
    retryable: bool,
}

pub fn decode_envelope(body: Value) -> Result<BackendReply, BackendError> {
    let env: Envelope = serde_json::from_value(body)
        .map_err(|e| BackendError::Rejected(format!("bad envelope: {e}")))?;
    if env.ok {
        let result = env
            .result
            .ok_or_else(|| BackendError::Rejected("ok envelope without result".into()))?;
        Ok(BackendReply {
            result,
            usage: env.usage,
        })
    } else {
        let msg = env.error.unwrap_or_else(|| "unspecified error".into());
        if env.retryable {
            Err(BackendError::Transient(msg))
        } else {
            Err(BackendError::Rejected(msg))
        }
    }
}

pub fn chat_completion_body(request: &OracleRequest, model: &str) -> Value {
    let payload = match &request.payload {
        Payload::FinalJudge(task) => serde_json::to_value(task),
        other => serde_json::to_value(other).map(|v| v["payload"].clone()),
    }
    .expect("payload serializes");
    let mut user = serde_json::to_string_pretty(&payload).expect("payload serializes");
    if request.attempt > 0 {
        user.push_str(
            "\n\nYour previous reply did not match the required JSON schema. Follow it exactly.",
        );
    }
    json!({
        "model": model,
        "temperature": 0,
        "response_format": {"type": "json_object"},
        "messages": [
            {"role": "system", "content": format!("{}\n{}", prompt_for(request.kind()).trim(), REFUSAL_NOTE)},
            {"role": "user", "content": user},
        ],
    })
}

fn usage_from(v: &Value, input: &str, output: &str) -> Option<TokenUsage> {
    let u = v.get("usage")?;
    Some(TokenUsage {
        input_tokens: u.get(input)?.as_u64()?,
        output_tokens: u.get(output).and_then(Value::as_u64).unwrap_or(0),
    })
}

pub fn parse_chat_completion(body: Value) -> Result<BackendReply, BackendError> {
    let content = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Rejected("chat reply has no message content".into()))?;
    // Unparseable content is passed through as a string so the gateway's
    // schema check can re-ask.
    let result =
        serde_json::from_str(content).unwrap_or_else(|_| Value::String(content.to_string()));
    Ok(BackendReply {
        result,
        usage: usage_from(&body, "prompt_tokens", "completion_tokens"),
    })
}

pub fn embedding_body(text: &str, model: &str) -> Value {
    json!({"model": model, "input": text})
}

pub fn parse_embedding(body: Value) -> Result<BackendReply, BackendError> {
    let vector = body
        .pointer("/data/0/embedding")
        .cloned()
        .ok_or_else(|| BackendError::Rejected("embedding reply has no data".into()))?;
    Ok(BackendReply {
        result: json!({ "vector": vector }),
        usage: usage_from(&body, "prompt_tokens", "completion_tokens"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::CallSite;

    fn keyword_request() -> OracleRequest {
        OracleRequest {
            call_site: CallSite::Anchoring,
            payload: Payload::KeywordExtract {
                question: "Who founded Ubisoft?".into(),
            },
            attempt: 0,
        }
    }

    #[test]
    fn envelope_carries_kind_payload_and_version() {
        let v = encode_envelope(&keyword_request());
        assert_eq!(v["kind"], "KeywordExtract");
        assert_eq!(v["payload"]["question"], "Who founded Ubisoft?");
        assert_eq!(v["schema_version"], SCHEMA_VERSION);
        assert_eq!(v["call_site"], "anchoring");
        let back: OracleRequest = serde_json::from_value(v).unwrap();
        assert_eq!(back, keyword_request());
    }

    #[test]
    fn envelope_decoding() {
        let ok = decode_envelope(json!({"ok": true, "result": {"keywords": []}, "usage": {"input_tokens": 3, "output_tokens": 1}}))
            .unwrap();
        assert_eq!(ok.usage.unwrap().input_tokens, 3);
        assert!(matches!(
            decode_envelope(json!({"ok": false, "error": "overloaded", "retryable": true})),
            Err(BackendError::Transient(_))
        ));
        assert!(matches!(
            decode_envelope(json!({"ok": false, "error": "bad kind"})),
            Err(BackendError::Rejected(_))
        ));
        assert!(decode_envelope(json!({"ok": true})).is_err());
    }

    #[test]
    fn chat_mapping_round_trip() {
        let mut req = keyword_request();
        req.attempt = 1;
        let body = chat_completion_body(&req, "some-model");
        assert_eq!(body["model"], "some-model");
        let system = body["messages"][0]["content"].as_str().unwrap();
        assert!(system.contains("\"keywords\""));
        let user = body["messages"][1]["content"].as_str().unwrap();
        assert!(user.contains("Who founded Ubisoft?"));
        assert!(user.contains("previous reply"));

        let reply = parse_chat_completion(json!({
            "choices": [{"message": {"content": "{\"keywords\": [\"Ubisoft\"]}"}}],
            "usage": {"prompt_tokens": 40, "completion_tokens": 5}
        }))
        .unwrap();
        assert_eq!(reply.result["keywords"][0], "Ubisoft");
        assert_eq!(reply.usage.unwrap().output_tokens, 5);

        let junk =
            parse_chat_completion(json!({"choices": [{"message": {"content": "not json"}}]}))
                .unwrap();
        assert_eq!(junk.result, json!("not json"));
    }

    #[test]
    fn embedding_mapping() {
        assert_eq!(embedding_body("abc", "m")["input"], "abc");
        let r = parse_embedding(json!({"data": [{"embedding": [0.5, 0.5]}]})).unwrap();
        assert_eq!(r.result["vector"][1], 0.5);
        assert!(parse_embedding(json!({})).is_err());
    }

    #[test]
    fn every_kind_has_a_prompt() {
        for kind in [
            OracleKind::KeywordExtract,
            OracleKind::SynonymJudge,
            OracleKind::PlanPropose,
            OracleKind::PlanRefine,
            OracleKind::EntityScore,
            OracleKind::DirectionSelect,
            OracleKind::PathSelect,
            OracleKind::StepAnswer,
            OracleKind::CandidateAnswer,
            OracleKind::FinalJudge,
        ] {
            assert!(prompt_for(kind).contains("JSON"), "{kind}");
        }
    }
}
