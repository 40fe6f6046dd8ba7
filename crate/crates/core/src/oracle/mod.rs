//! Oracle gateway: the single chokepoint for LLM and embedding calls.
//!
//! Every request goes through [`OracleGateway::dispatch`], which retries
//! transient backend failures with capped exponential backoff, validates the
//! reply against the kind's schema (one re-ask on a malformed reply, then a
//! hard error), meters token usage per call site, and appends a digest
//! record to the transcript.

mod mock;
mod protocol;
mod types;

#[cfg(feature = "http")]
mod http;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use tracing::{debug, warn};

use crate::embed::EmbeddingVector;
use crate::error::{Error, Result};
use crate::graph::EntityId;

#[cfg(feature = "http")]
pub use http::HttpBackend;
pub use mock::{
    mock_embedding, AnswerFixture, DirectionFixture, EntityScoreFixture, JudgeFixture,
    KeywordFixture, MockFixtures, MockOracle, PathRule, PlanFixture, RefineFixture, RefuseFixture,
    MOCK_EMBED_DIM, NO_EVIDENCE_ANSWER,
};
pub use protocol::{
    chat_completion_body, decode_envelope, embedding_body, encode_envelope, parse_chat_completion,
    parse_embedding, prompt_for, ProtocolStyle, SCHEMA_VERSION,
};
pub use types::*;

/// Raw reply from a backend before schema validation.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendReply {
    pub result: Value,
    pub usage: Option<TokenUsage>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("unreachable: {0}")]
    Unreachable(String),
    #[error("rejected: {0}")]
    Rejected(String),
}

pub trait OracleBackend: Send + Sync {
    fn name(&self) -> &str;
    fn call(&self, request: &OracleRequest) -> Result<BackendReply, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_cap_ms: u64,
    /// Serializes calls so transcripts follow request order.
    pub deterministic: bool,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            max_in_flight: 8,
            max_retries: 3,
            backoff_base_ms: 200,
            backoff_cap_ms: 5_000,
            deterministic: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageTotals {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// One line of the JSONL transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub seq: u64,
    pub call_site: CallSite,
    pub kind: OracleKind,
    pub attempt: u32,
    pub payload_digest: String,
    pub result_digest: String,
    pub tokens: TokenUsage,
}

struct Slots {
    in_use: Mutex<usize>,
    freed: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_use.lock().expect("slot lock");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Default)]
struct Meter {
    usage: Vec<UsageRecord>,
    transcript: Vec<TranscriptRecord>,
}

pub struct OracleGateway {
    backend: Arc<dyn OracleBackend>,
    config: GatewayConfig,
    meter: Mutex<Meter>,
    slots: Slots,
    serial: Mutex<()>,
}

impl std::fmt::Debug for OracleGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OracleGateway")
            .field("backend", &self.backend.name())
            .field("config", &self.config)
            .finish()
    }
}

pub(crate) fn digest(v: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(v).expect("serializable");
    hex::encode(&Sha256::digest(&bytes)[..8])
}

/// Whitespace-split token count over every string leaf.
pub fn count_tokens(v: &Value) -> u64 {
    match v {
        Value::String(s) => s.split_whitespace().count() as u64,
        Value::Array(xs) => xs.iter().map(count_tokens).sum(),
        Value::Object(m) => m.values().map(count_tokens).sum(),
        _ => 0,
    }
}

impl OracleGateway {
    pub fn new(backend: Arc<dyn OracleBackend>, config: GatewayConfig) -> Self {
        Self {
            backend,
            config,
            meter: Mutex::new(Meter::default()),
            slots: Slots {
                in_use: Mutex::new(0),
                freed: Condvar::new(),
            },
            serial: Mutex::new(()),
        }
    }

    /// Gateway over the deterministic mock backend.
    pub fn mock(fixtures: MockFixtures) -> Self {
        Self::new(
            Arc::new(MockOracle::new(fixtures)),
            GatewayConfig::default(),
        )
    }

    pub fn backend(&self) -> Arc<dyn OracleBackend> {
        Arc::clone(&self.backend)
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let cap = self.config.max_in_flight.max(1);
        let mut n = self.slots.in_use.lock().expect("slot lock");
        while *n >= cap {
            n = self.slots.freed.wait(n).expect("slot lock");
        }
        *n += 1;
        SlotGuard(&self.slots)
    }

    fn call_with_retry(&self, request: &OracleRequest) -> Result<BackendReply> {
        let mut attempt = 0u32;
        loop {
            let outcome = {
                let _slot = self.acquire();
                self.backend.call(request)
            };
            match outcome {
                Ok(reply) => return Ok(reply),
                Err(BackendError::Rejected(msg)) => return Err(Error::Backend(msg)),
                Err(err) if attempt < self.config.max_retries => {
                    let delay = self
                        .config
                        .backoff_base_ms
                        .saturating_mul(1u64 << attempt.min(20))
                        .min(self.config.backoff_cap_ms);
                    debug!(kind = %request.kind(), attempt, delay, "retrying oracle call: {err}");
                    if delay > 0 {
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                    attempt += 1;
                }
                Err(BackendError::Unreachable(msg)) => return Err(Error::BackendUnreachable(msg)),
                Err(BackendError::Transient(msg)) => {
                    return Err(Error::Backend(format!("{msg} (after {attempt} retries)")))
                }
            }
        }
    }

    fn record(&self, request: &OracleRequest, reply: &BackendReply) {
        let payload = serde_json::to_value(&request.payload).expect("payload serializes");
        let tokens = reply.usage.unwrap_or_else(|| TokenUsage {
            input_tokens: count_tokens(payload.get("payload").unwrap_or(&payload)),
            output_tokens: count_tokens(&reply.result),
        });
        let mut meter = self.meter.lock().expect("meter lock");
        let seq = meter.transcript.len() as u64;
        meter.usage.push(UsageRecord {
            call_site: request.call_site,
            kind: request.kind(),
            input_tokens: tokens.input_tokens,
            output_tokens: tokens.output_tokens,
        });
        meter.transcript.push(TranscriptRecord {
            seq,
            call_site: request.call_site,
            kind: request.kind(),
            attempt: request.attempt,
            payload_digest: digest(&payload),
            result_digest: digest(&reply.result),
            tokens,
        });
    }

    fn parse<T: OracleResponse>(result: &Value) -> std::result::Result<Outcome<T>, String> {
        if let Some(reason) = result.get("refusal") {
            return Ok(Outcome::Refused(
                reason.as_str().unwrap_or("refused").to_string(),
            ));
        }
        let parsed: T = serde_json::from_value(result.clone()).map_err(|e| e.to_string())?;
        parsed.validate()?;
        Ok(Outcome::Answer(parsed))
    }

    /// Sends one request and validates the reply as `T`.
    pub fn dispatch<T: OracleResponse>(
        &self,
        call_site: CallSite,
        payload: Payload,
    ) -> Result<Outcome<T>> {
        let _serial = self
            .config
            .deterministic
            .then(|| self.serial.lock().expect("serial lock"));
        let kind = payload.kind();
        let mut request = OracleRequest {
            call_site,
            payload,
            attempt: 0,
        };
        loop {
            let reply = self.call_with_retry(&request)?;
            self.record(&request, &reply);
            match Self::parse::<T>(&reply.result) {
                Ok(outcome) => return Ok(outcome),
                Err(diagnostics) if request.attempt == 0 => {
                    warn!(%kind, "malformed oracle reply, re-asking: {diagnostics}");
                    request.attempt = 1;
                }
                Err(diagnostics) => {
                    return Err(Error::SchemaViolation {
                        kind: kind.as_str(),
                        diagnostics,
                    })
                }
            }
        }
    }

    pub fn embed(&self, call_site: CallSite, text: &str) -> Result<EmbeddingVector> {
        let out: Outcome<EmbedResponse> = self.dispatch(
            call_site,
            Payload::Embed {
                text: text.to_string(),
            },
        )?;
        match out {
            Outcome::Answer(r) => EmbeddingVector::new(r.vector),
            Outcome::Refused(reason) => Err(Error::Backend(format!("embedding refused: {reason}"))),
        }
    }

    pub fn extract_keywords(
        &self,
        call_site: CallSite,
        question: &str,
    ) -> Result<Outcome<KeywordResponse>> {
        self.dispatch(
            call_site,
            Payload::KeywordExtract {
                question: question.to_string(),
            },
        )
    }

    pub fn judge_synonyms(
        &self,
        call_site: CallSite,
        entities: Vec<EntityBrief>,
    ) -> Result<Outcome<SynonymResponse>> {
        self.dispatch(call_site, Payload::SynonymJudge { entities })
    }

    pub fn propose_plan(
        &self,
        call_site: CallSite,
        question: &str,
        topics: Vec<String>,
        context: &str,
        variant: usize,
    ) -> Result<Outcome<PlanResponse>> {
        self.dispatch(
            call_site,
            Payload::PlanPropose {
                question: question.to_string(),
                topics,
                context: context.to_string(),
                variant,
            },
        )
    }

    pub fn refine_plan(
        &self,
        call_site: CallSite,
        question: &str,
        subquestions: Vec<RefineNode>,
        deps: Vec<(usize, usize)>,
        completed_level: usize,
    ) -> Result<Outcome<PlanResponse>> {
        self.dispatch(
            call_site,
            Payload::PlanRefine {
                question: question.to_string(),
                subquestions,
                deps,
                completed_level,
            },
        )
    }

    pub fn score_entity(
        &self,
        call_site: CallSite,
        entity: EntityId,
        name: &str,
        description: &str,
        question: &str,
    ) -> Result<Outcome<EntityScoreResult>> {
        self.dispatch(
            call_site,
            Payload::EntityScore {
                entity,
                name: name.to_string(),
                description: description.to_string(),
                question: question.to_string(),
            },
        )
    }

    pub fn select_directions(
        &self,
        call_site: CallSite,
        question: &str,
        candidates: Vec<DirectionOption>,
        b: usize,
    ) -> Result<Outcome<DirectionResponse>> {
        self.dispatch(
            call_site,
            Payload::DirectionSelect {
                question: question.to_string(),
                candidates,
                b,
            },
        )
    }

    pub fn select_paths(
        &self,
        call_site: CallSite,
        question: &str,
        paths: Vec<PathOption>,
    ) -> Result<Outcome<PathSelectResponse>> {
        self.dispatch(
            call_site,
            Payload::PathSelect {
                question: question.to_string(),
                paths,
            },
        )
    }

    pub fn answer_step(
        &self,
        call_site: CallSite,
        question: &str,
        context: &str,
    ) -> Result<Outcome<AnswerResponse>> {
        self.dispatch(
            call_site,
            Payload::StepAnswer {
                question: question.to_string(),
                context: context.to_string(),
            },
        )
    }

    pub fn candidate_answer(
        &self,
        call_site: CallSite,
        question: &str,
        context: &str,
        no_evidence: bool,
    ) -> Result<Outcome<AnswerResponse>> {
        self.dispatch(
            call_site,
            Payload::CandidateAnswer {
                question: question.to_string(),
                context: context.to_string(),
                no_evidence,
            },
        )
    }

    pub fn rank_candidates(
        &self,
        call_site: CallSite,
        question: &str,
        candidates: Vec<CandidateBrief>,
    ) -> Result<Outcome<RankResponse>> {
        self.dispatch(
            call_site,
            Payload::FinalJudge(JudgeTask::Rank {
                question: question.to_string(),
                candidates,
            }),
        )
    }

    pub fn grade(
        &self,
        call_site: CallSite,
        question: &str,
        answer: &str,
        gold: &str,
    ) -> Result<Outcome<GradeResponse>> {
        self.dispatch(
            call_site,
            Payload::FinalJudge(JudgeTask::Grade {
                question: question.to_string(),
                answer: answer.to_string(),
                gold: gold.to_string(),
            }),
        )
    }

    /// Per-module totals: call count plus input and output tokens.
    pub fn usage_report(&self) -> BTreeMap<String, UsageTotals> {
        let meter = self.meter.lock().expect("meter lock");
        let mut out: BTreeMap<String, UsageTotals> = BTreeMap::new();
        for r in &meter.usage {
            let t = out.entry(r.call_site.to_string()).or_default();
            t.calls += 1;
            t.input_tokens += r.input_tokens;
            t.output_tokens += r.output_tokens;
        }
        out
    }

    pub fn usage_log(&self) -> Vec<UsageRecord> {
        self.meter.lock().expect("meter lock").usage.clone()
    }

    /// Call counts per oracle kind.
    pub fn calls_by_kind(&self) -> BTreeMap<String, u64> {
        let meter = self.meter.lock().expect("meter lock");
        let mut out: BTreeMap<String, u64> = BTreeMap::new();
        for r in &meter.usage {
            *out.entry(r.kind.as_str().to_string()).or_default() += 1;
        }
        out
    }

    pub fn calls_of(&self, kind: OracleKind) -> usize {
        self.meter
            .lock()
            .expect("meter lock")
            .usage
            .iter()
            .filter(|r| r.kind == kind)
            .count()
    }

    pub fn transcript(&self) -> Vec<TranscriptRecord> {
        self.meter.lock().expect("meter lock").transcript.clone()
    }

    pub fn write_transcript(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for rec in self.transcript() {
            serde_json::to_writer(&mut f, &rec)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        Ok(())
    }
}
