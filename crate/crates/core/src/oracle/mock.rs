//! Deterministic mock backend.
//!
//! Every reply is a pure function of `(kind, payload, seed)`. Behaviour is
//! steered by a [`MockFixtures`] document; anything the fixtures do not
//! cover falls back to simple string heuristics described on each handler.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    BackendError, BackendReply, CandidateBrief, DirectionOption, EntityBrief, JudgeTask,
    OracleBackend, OracleKind, OracleRequest, PathOption, Payload, RefineNode,
};
use crate::eval::f1_score;
use crate::planning::ReasoningPlan;
use crate::text::{contains_folded, dedup_folded, fold, is_stopword};

pub const MOCK_EMBED_DIM: usize = 256;

pub const NO_EVIDENCE_ANSWER: &str = "No supporting evidence was found in the knowledge graph.";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KeywordFixture {
    pub question: String,
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanFixture {
    pub question_contains: String,
    /// Variant `i` receives `plans[i % len]`.
    #[serde(default)]
    pub plans: Vec<ReasoningPlan>,
    /// Raw replies served instead of `plans` (for malformed-plan tests).
    #[serde(default)]
    pub raw: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineFixture {
    pub question_contains: String,
    /// Applies when the payload's `completed_level` equals this value.
    pub after_level: usize,
    pub plan: ReasoningPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityScoreFixture {
    pub entity: String,
    pub question_contains: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DirectionFixture {
    pub question_contains: String,
    /// Candidates whose last hyperedge name contains one of these go first.
    pub prefer: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PathRule {
    pub question_contains: String,
    /// A path is sufficient when every string occurs in one of its edge names.
    pub requires: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnswerFixture {
    pub question_contains: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_contains: Option<String>,
    pub answer: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JudgeFixture {
    pub question_contains: String,
    pub prefer_answer_contains: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefuseFixture {
    pub kind: OracleKind,
    #[serde(default)]
    pub question_contains: String,
}

/// Fixture document steering the mock backend.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockFixtures {
    pub seed: u64,
    /// Groups of names the synonym judge treats as the same entity.
    pub aliases: Vec<Vec<String>>,
    pub keywords: Vec<KeywordFixture>,
    pub plans: Vec<PlanFixture>,
    pub refinements: Vec<RefineFixture>,
    pub entity_scores: Vec<EntityScoreFixture>,
    pub directions: Vec<DirectionFixture>,
    pub paths: Vec<PathRule>,
    pub step_answers: Vec<AnswerFixture>,
    pub candidate_answers: Vec<AnswerFixture>,
    pub judge: Vec<JudgeFixture>,
    pub refuse: Vec<RefuseFixture>,
}

impl MockFixtures {
    pub fn from_path(path: &std::path::Path) -> crate::Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct MockOracle {
    fixtures: MockFixtures,
    alias_keys: HashMap<String, usize>,
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ mix64(seed);
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(h)
}

/// Signed character-trigram hashing into `MOCK_EMBED_DIM` buckets,
/// L2-normalized. Text is folded first, so case and punctuation
/// differences do not change the vector.
pub fn mock_embedding(text: &str, seed: u64) -> Vec<f32> {
    let folded = fold(text);
    let padded: Vec<char> = format!("^{folded}$").chars().collect();
    let mut acc = vec![0f64; MOCK_EMBED_DIM];
    for w in padded.windows(3) {
        let tri: String = w.iter().collect();
        let h = fnv1a(tri.as_bytes(), seed);
        let bucket = (h % MOCK_EMBED_DIM as u64) as usize;
        acc[bucket] += if (h >> 40) & 1 == 0 { 1.0 } else { -1.0 };
    }
    let mut norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        let h = fnv1a(folded.as_bytes(), seed);
        acc[(h % MOCK_EMBED_DIM as u64) as usize] = 1.0;
        norm = 1.0;
    }
    acc.iter().map(|x| (x / norm) as f32).collect()
}

fn mock_cosine(a: &str, b: &str, seed: u64) -> f64 {
    let (x, y) = (mock_embedding(a, seed), mock_embedding(b, seed));
    x.iter()
        .zip(&y)
        .map(|(p, q)| *p as f64 * *q as f64)
        .sum::<f64>()
        .clamp(-1.0, 1.0)
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn refusal(reason: &str) -> Value {
    json!({ "refusal": reason })
}

impl MockOracle {
    pub fn new(fixtures: MockFixtures) -> Self {
        let mut alias_keys = HashMap::new();
        for (i, group) in fixtures.aliases.iter().enumerate() {
            for name in group {
                alias_keys.insert(fold(name), i);
            }
        }
        Self {
            fixtures,
            alias_keys,
        }
    }

    pub fn fixtures(&self) -> &MockFixtures {
        &self.fixtures
    }

    fn question_of(payload: &Payload) -> &str {
        match payload {
            Payload::Embed { text } => text,
            Payload::KeywordExtract { question }
            | Payload::PlanPropose { question, .. }
            | Payload::PlanRefine { question, .. }
            | Payload::EntityScore { question, .. }
            | Payload::DirectionSelect { question, .. }
            | Payload::PathSelect { question, .. }
            | Payload::StepAnswer { question, .. }
            | Payload::CandidateAnswer { question, .. } => question,
            Payload::FinalJudge(
                JudgeTask::Rank { question, .. } | JudgeTask::Grade { question, .. },
            ) => question,
            Payload::SynonymJudge { .. } => "",
        }
    }

    fn refused(&self, payload: &Payload) -> bool {
        let q = Self::question_of(payload);
        self.fixtures.refuse.iter().any(|r| {
            r.kind == payload.kind()
                && (r.question_contains.is_empty() || contains_folded(q, &r.question_contains))
        })
    }

    /// Fixture list for the exact question, else quoted phrases and
    /// capitalized runs, else content words.
    fn keywords(&self, question: &str) -> Value {
        if let Some(f) = self
            .fixtures
            .keywords
            .iter()
            .find(|f| fold(&f.question) == fold(question))
        {
            return json!({ "keywords": dedup_folded(f.keywords.clone()) });
        }
        if fold(question).is_empty() {
            return json!({ "keywords": [] });
        }
        let mut found = Vec::new();
        for (i, part) in question.split(['"', '\u{201c}', '\u{201d}']).enumerate() {
            if i % 2 == 1 && !part.trim().is_empty() {
                found.push(part.trim().to_string());
            }
        }
        let quoted: Vec<String> = found.iter().map(|q| fold(q)).collect();
        let mut runs = Vec::new();
        let mut run: Vec<&str> = Vec::new();
        let words: Vec<&str> = question.split_whitespace().collect();
        for (i, raw) in words.iter().enumerate() {
            let w = raw.trim_matches(|c: char| !c.is_alphanumeric());
            let capital = w.chars().next().is_some_and(|c| c.is_uppercase());
            let interrogative = i == 0 && is_stopword(&w.to_lowercase());
            if capital && !interrogative {
                run.push(w);
            } else if !run.is_empty() {
                runs.push(run.join(" "));
                run.clear();
            }
        }
        if !run.is_empty() {
            runs.push(run.join(" "));
        }
        found.extend(
            runs.into_iter()
                .filter(|r| !quoted.iter().any(|q| q.contains(&fold(r)))),
        );
        if found.is_empty() {
            found = fold(question)
                .split(' ')
                .filter(|w| w.len() >= 3 && !is_stopword(w))
                .map(str::to_string)
                .collect();
        }
        json!({ "keywords": dedup_folded(found) })
    }

    /// Groups members by alias-table key (or folded name) and confirms the
    /// largest group with at least two members.
    fn synonyms(&self, entities: &[EntityBrief]) -> Value {
        let mut groups: BTreeMap<String, Vec<_>> = BTreeMap::new();
        for e in entities {
            let key = fold(&e.name);
            let key = match self.alias_keys.get(&key) {
                Some(i) => format!("#alias{i}"),
                None => key,
            };
            groups.entry(key).or_default().push(e.id);
        }
        let best = groups
            .into_values()
            .filter(|g| g.len() >= 2)
            .map(|mut g| {
                g.sort();
                g
            })
            .max_by(|a, b| a.len().cmp(&b.len()).then_with(|| b[0].cmp(&a[0])));
        match best {
            Some(members) => json!({ "synonymous": true, "members": members }),
            None => json!({ "synonymous": false, "members": [] }),
        }
    }

    fn propose(&self, question: &str, variant: usize) -> Value {
        if let Some(f) = self
            .fixtures
            .plans
            .iter()
            .find(|f| contains_folded(question, &f.question_contains))
        {
            if !f.raw.is_empty() {
                return f.raw[variant % f.raw.len()].clone();
            }
            if !f.plans.is_empty() {
                return json!({ "plan": f.plans[variant % f.plans.len()] });
            }
        }
        let plan = ReasoningPlan::single(question);
        json!({ "plan": plan })
    }

    fn refine(&self, question: &str, completed_level: usize, _nodes: &[RefineNode]) -> Value {
        match self.fixtures.refinements.iter().find(|f| {
            f.after_level == completed_level && contains_folded(question, &f.question_contains)
        }) {
            Some(f) => json!({ "plan": f.plan }),
            None => refusal("no refinement"),
        }
    }

    fn entity_score(
        &self,
        entity: crate::graph::EntityId,
        name: &str,
        description: &str,
        question: &str,
    ) -> Value {
        let fixed = self.fixtures.entity_scores.iter().find(|f| {
            fold(&f.entity) == fold(name) && contains_folded(question, &f.question_contains)
        });
        let score = match fixed {
            Some(f) => f.score,
            None => {
                let text = if description.trim().is_empty() {
                    name
                } else {
                    description
                };
                round2(mock_cosine(text, question, self.fixtures.seed).max(0.0))
            }
        };
        json!({ "entity": entity, "score": score })
    }

    fn directions(&self, question: &str, candidates: &[DirectionOption], b: usize) -> Value {
        let prefer: Vec<&String> = self
            .fixtures
            .directions
            .iter()
            .filter(|f| contains_folded(question, &f.question_contains))
            .flat_map(|f| f.prefer.iter())
            .collect();
        let preferred = |c: &DirectionOption| {
            c.path
                .last()
                .is_some_and(|last| prefer.iter().any(|p| contains_folded(last, p)))
        };
        let mut picks: Vec<usize> = candidates
            .iter()
            .filter(|c| preferred(c))
            .map(|c| c.index)
            .collect();
        picks.extend(candidates.iter().filter(|c| !preferred(c)).map(|c| c.index));
        picks.truncate(b);
        json!({ "picks": picks })
    }

    /// With a matching rule: paths containing every required string.
    /// Without one: the top-ranked path.
    fn paths(&self, question: &str, paths: &[PathOption]) -> Value {
        let rule = self
            .fixtures
            .paths
            .iter()
            .find(|r| contains_folded(question, &r.question_contains));
        let selected: Vec<usize> = match rule {
            Some(rule) => paths
                .iter()
                .filter(|p| {
                    rule.requires
                        .iter()
                        .all(|req| p.path.iter().any(|name| contains_folded(name, req)))
                })
                .map(|p| p.index)
                .collect(),
            None => paths.first().map(|p| p.index).into_iter().collect(),
        };
        json!({ "selected": selected })
    }

    fn find_answer<'a>(
        fixtures: &'a [AnswerFixture],
        question: &str,
        context: &str,
    ) -> Option<&'a AnswerFixture> {
        fixtures.iter().find(|f| {
            contains_folded(question, &f.question_contains)
                && f.context_contains
                    .as_deref()
                    .is_none_or(|c| contains_folded(context, c))
        })
    }

    /// Default: first non-empty context line that is not a section header.
    fn step_answer(&self, question: &str, context: &str) -> Value {
        if let Some(f) = Self::find_answer(&self.fixtures.step_answers, question, context) {
            return json!({ "answer": f.answer });
        }
        match context
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty() && !l.ends_with(':'))
        {
            Some(line) => {
                let answer: String = line.trim_start_matches("- ").chars().take(200).collect();
                json!({ "answer": answer })
            }
            None => refusal("empty context"),
        }
    }

    /// Default: the last `Answer:` line of the aggregated context.
    fn candidate(&self, question: &str, context: &str, no_evidence: bool) -> Value {
        if let Some(f) = Self::find_answer(&self.fixtures.candidate_answers, question, context) {
            return json!({ "answer": f.answer });
        }
        if no_evidence || context.trim().is_empty() {
            return json!({ "answer": NO_EVIDENCE_ANSWER });
        }
        let last = context
            .lines()
            .filter_map(|l| l.trim().strip_prefix("Answer:"))
            .map(str::trim)
            .rfind(|a| !a.is_empty());
        match last.or_else(|| context.lines().map(str::trim).find(|l| !l.is_empty())) {
            Some(a) => json!({ "answer": a }),
            None => refusal("empty context"),
        }
    }

    /// Preferred answers first, then by the share of answer tokens found in
    /// the candidate's own context.
    fn rank(&self, question: &str, candidates: &[CandidateBrief]) -> Value {
        let prefer: Vec<&str> = self
            .fixtures
            .judge
            .iter()
            .filter(|f| contains_folded(question, &f.question_contains))
            .map(|f| f.prefer_answer_contains.as_str())
            .collect();
        let support = |c: &CandidateBrief| {
            let ctx = fold(&c.context);
            let ctx_tokens: std::collections::HashSet<&str> = ctx.split(' ').collect();
            let answer = fold(&c.answer);
            let tokens: Vec<&str> = answer.split(' ').filter(|t| !t.is_empty()).collect();
            if tokens.is_empty() {
                return 0.0;
            }
            tokens.iter().filter(|t| ctx_tokens.contains(*t)).count() as f64 / tokens.len() as f64
        };
        let mut keyed: Vec<(bool, f64, usize)> = candidates
            .iter()
            .map(|c| {
                let preferred = prefer.iter().any(|p| contains_folded(&c.answer, p));
                (preferred, support(c), c.index)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
        json!({ "ranking": keyed.into_iter().map(|k| k.2).collect::<Vec<_>>() })
    }

    fn respond(&self, payload: &Payload) -> Value {
        if self.refused(payload) {
            return refusal("fixture refusal");
        }
        let seed = self.fixtures.seed;
        match payload {
            Payload::Embed { text } => json!({ "vector": mock_embedding(text, seed) }),
            Payload::KeywordExtract { question } => self.keywords(question),
            Payload::SynonymJudge { entities } => self.synonyms(entities),
            Payload::PlanPropose {
                question, variant, ..
            } => self.propose(question, *variant),
            Payload::PlanRefine {
                question,
                subquestions,
                completed_level,
                ..
            } => self.refine(question, *completed_level, subquestions),
            Payload::EntityScore {
                entity,
                name,
                description,
                question,
            } => self.entity_score(*entity, name, description, question),
            Payload::DirectionSelect {
                question,
                candidates,
                b,
            } => self.directions(question, candidates, *b),
            Payload::PathSelect { question, paths } => self.paths(question, paths),
            Payload::StepAnswer { question, context } => self.step_answer(question, context),
            Payload::CandidateAnswer {
                question,
                context,
                no_evidence,
            } => self.candidate(question, context, *no_evidence),
            Payload::FinalJudge(JudgeTask::Rank {
                question,
                candidates,
            }) => self.rank(question, candidates),
            Payload::FinalJudge(JudgeTask::Grade { answer, gold, .. }) => {
                json!({ "score": (100.0 * f1_score(answer, gold)).round() })
            }
        }
    }
}

impl OracleBackend for MockOracle {
    fn name(&self) -> &str {
        "mock"
    }

    fn call(&self, request: &OracleRequest) -> Result<BackendReply, BackendError> {
        Ok(BackendReply {
            result: self.respond(&request.payload),
            usage: None,
        })
    }
}
