//! Typed request and response contracts for every oracle kind.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::graph::EntityId;
use crate::planning::ReasoningPlan;

/// Module tag used for metering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CallSite {
    Construction,
    EmbedIndex,
    Anchoring,
    Planning,
    Reasoning,
    Retrieval,
    Generation,
    Evaluation,
}

impl CallSite {
    pub fn as_str(self) -> &'static str {
        match self {
            CallSite::Construction => "construction",
            CallSite::EmbedIndex => "embed-index",
            CallSite::Anchoring => "anchoring",
            CallSite::Planning => "planning",
            CallSite::Reasoning => "reasoning",
            CallSite::Retrieval => "retrieval",
            CallSite::Generation => "generation",
            CallSite::Evaluation => "evaluation",
        }
    }
}

impl fmt::Display for CallSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OracleKind {
    Embed,
    KeywordExtract,
    SynonymJudge,
    PlanPropose,
    PlanRefine,
    EntityScore,
    DirectionSelect,
    PathSelect,
    StepAnswer,
    CandidateAnswer,
    FinalJudge,
}

impl OracleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OracleKind::Embed => "Embed",
            OracleKind::KeywordExtract => "KeywordExtract",
            OracleKind::SynonymJudge => "SynonymJudge",
            OracleKind::PlanPropose => "PlanPropose",
            OracleKind::PlanRefine => "PlanRefine",
            OracleKind::EntityScore => "EntityScore",
            OracleKind::DirectionSelect => "DirectionSelect",
            OracleKind::PathSelect => "PathSelect",
            OracleKind::StepAnswer => "StepAnswer",
            OracleKind::CandidateAnswer => "CandidateAnswer",
            OracleKind::FinalJudge => "FinalJudge",
        }
    }
}

impl fmt::Display for OracleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityBrief {
    pub id: EntityId,
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineNode {
    pub id: usize,
    pub text: String,
    #[serde(default)]
    pub topics: Vec<String>,
    pub completed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionOption {
    pub index: usize,
    /// Hyperedge names along the partial path.
    pub path: Vec<String>,
    pub ewo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathOption {
    pub index: usize,
    pub path: Vec<String>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateBrief {
    pub index: usize,
    pub answer: String,
    pub context: String,
}

/// Kind-specific request payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum Payload {
    Embed {
        text: String,
    },
    KeywordExtract {
        question: String,
    },
    SynonymJudge {
        entities: Vec<EntityBrief>,
    },
    PlanPropose {
        question: String,
        topics: Vec<String>,
        context: String,
        variant: usize,
    },
    PlanRefine {
        question: String,
        subquestions: Vec<RefineNode>,
        deps: Vec<(usize, usize)>,
        completed_level: usize,
    },
    EntityScore {
        entity: EntityId,
        name: String,
        description: String,
        question: String,
    },
    DirectionSelect {
        question: String,
        candidates: Vec<DirectionOption>,
        b: usize,
    },
    PathSelect {
        question: String,
        paths: Vec<PathOption>,
    },
    StepAnswer {
        question: String,
        context: String,
    },
    CandidateAnswer {
        question: String,
        context: String,
        no_evidence: bool,
    },
    FinalJudge(JudgeTask),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum JudgeTask {
    /// Rank candidate answers by consistency with their reasoning context.
    Rank {
        question: String,
        candidates: Vec<CandidateBrief>,
    },
    /// Grade an answer against the gold answer on a 0-100 scale.
    Grade {
        question: String,
        answer: String,
        gold: String,
    },
}

impl Payload {
    pub fn kind(&self) -> OracleKind {
        match self {
            Payload::Embed { .. } => OracleKind::Embed,
            Payload::KeywordExtract { .. } => OracleKind::KeywordExtract,
            Payload::SynonymJudge { .. } => OracleKind::SynonymJudge,
            Payload::PlanPropose { .. } => OracleKind::PlanPropose,
            Payload::PlanRefine { .. } => OracleKind::PlanRefine,
            Payload::EntityScore { .. } => OracleKind::EntityScore,
            Payload::DirectionSelect { .. } => OracleKind::DirectionSelect,
            Payload::PathSelect { .. } => OracleKind::PathSelect,
            Payload::StepAnswer { .. } => OracleKind::StepAnswer,
            Payload::CandidateAnswer { .. } => OracleKind::CandidateAnswer,
            Payload::FinalJudge(_) => OracleKind::FinalJudge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRequest {
    pub call_site: CallSite,
    #[serde(flatten)]
    pub payload: Payload,
    /// 0 for the first ask, 1 for the re-ask after a malformed response.
    #[serde(default)]
    pub attempt: u32,
}

impl OracleRequest {
    pub fn kind(&self) -> OracleKind {
        self.payload.kind()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub call_site: CallSite,
    pub kind: OracleKind,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// Either a schema-valid answer or an explicit refusal.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome<T> {
    Answer(T),
    Refused(String),
}

impl<T> Outcome<T> {
    pub fn answer(self) -> Option<T> {
        match self {
            Outcome::Answer(t) => Some(t),
            Outcome::Refused(_) => None,
        }
    }

    pub fn is_refusal(&self) -> bool {
        matches!(self, Outcome::Refused(_))
    }
}

/// A response type that can check itself after deserialization.
pub trait OracleResponse: serde::de::DeserializeOwned {
    fn validate(&self) -> Result<(), String> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vector: Vec<f32>,
}

impl OracleResponse for EmbedResponse {
    fn validate(&self) -> Result<(), String> {
        if self.vector.is_empty() {
            return Err("empty vector".into());
        }
        if self.vector.iter().any(|x| !x.is_finite()) {
            return Err("non-finite component".into());
        }
        if self.vector.iter().all(|x| *x == 0.0) {
            return Err("zero vector".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordResponse {
    pub keywords: Vec<String>,
}

impl OracleResponse for KeywordResponse {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynonymResponse {
    pub synonymous: bool,
    #[serde(default)]
    pub members: Vec<EntityId>,
}

impl OracleResponse for SynonymResponse {
    fn validate(&self) -> Result<(), String> {
        if self.synonymous && self.members.len() < 2 {
            return Err("synonymous=true needs at least two members".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResponse {
    pub plan: ReasoningPlan,
}

impl OracleResponse for PlanResponse {}

/// Entity relevance score in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityScoreResult {
    pub entity: EntityId,
    pub score: f64,
}

impl OracleResponse for EntityScoreResult {
    fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!("score {} outside [0,1]", self.score));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionResponse {
    pub picks: Vec<usize>,
}

impl OracleResponse for DirectionResponse {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSelectResponse {
    pub selected: Vec<usize>,
}

impl OracleResponse for PathSelectResponse {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerResponse {
    pub answer: String,
}

impl OracleResponse for AnswerResponse {
    fn validate(&self) -> Result<(), String> {
        if self.answer.trim().is_empty() {
            return Err("empty answer".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResponse {
    pub ranking: Vec<usize>,
}

impl OracleResponse for RankResponse {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeResponse {
    pub score: f64,
}

impl OracleResponse for GradeResponse {
    fn validate(&self) -> Result<(), String> {
        if !(0.0..=100.0).contains(&self.score) {
            return Err(format!("grade {} outside [0,100]", self.score));
        }
        Ok(())
    }
}
