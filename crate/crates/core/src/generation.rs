//! Final answer generation over completed reasoning DAGs.

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::oracle::{CallSite, CandidateBrief, OracleGateway, Outcome, NO_EVIDENCE_ANSWER};
use crate::planning::ReasoningDag;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAnswer {
    pub answer: String,
    pub source_dag_digest: String,
    pub aggregated_context: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub answer: String,
    /// Candidates in judged order; the first one is `answer`.
    pub candidates: Vec<CandidateAnswer>,
    pub no_evidence: bool,
}

fn block(dag: &ReasoningDag, id: usize, with_context: bool) -> String {
    let text = dag
        .plan
        .subquestion(id)
        .map(|s| s.text.as_str())
        .unwrap_or("");
    let pair = dag.ap.get(&id).and_then(|v| v.first());
    let mut out = format!("[q{id}] {text}\n");
    if let Some(p) = pair {
        out.push_str(&format!("Answer: {}\n", p.answer));
        if with_context && !p.context.trim().is_empty() {
            out.push_str(p.context.trim_end());
            out.push('\n');
        }
    }
    out
}

/// Knowledge gathered along a DAG: one block per subquestion in level
/// order, each holding the subquestion, its answer and the fused path
/// context. Under budget pressure later blocks lose their context first
/// and are dropped after that.
pub fn aggregate_dag_knowledge(dag: &ReasoningDag, budget: usize) -> String {
    let mut out = String::new();
    let mut used = 0usize;
    for level in &dag.levels {
        for &id in level {
            let full = block(dag, id, true);
            let short = block(dag, id, false);
            let pick = [full, short]
                .into_iter()
                .find(|b| used + b.chars().count() < budget);
            let Some(b) = pick else { return out };
            if !out.is_empty() {
                out.push('\n');
                used += 1;
            }
            used += b.chars().count();
            out.push_str(&b);
        }
    }
    out
}

fn no_evidence(gateway: &OracleGateway, question: &str) -> Result<FinalAnswer> {
    let answer = match gateway.candidate_answer(CallSite::Generation, question, "", true) {
        Ok(Outcome::Answer(r)) => r.answer,
        Ok(Outcome::Refused(_)) => NO_EVIDENCE_ANSWER.to_string(),
        Err(e @ Error::BackendUnreachable(_)) => return Err(e),
        Err(e) => {
            warn!(error = %e, "no-evidence answer failed, using fixed disclaimer");
            NO_EVIDENCE_ANSWER.to_string()
        }
    };
    Ok(FinalAnswer {
        answer,
        candidates: Vec::new(),
        no_evidence: true,
    })
}

/// One candidate per completed DAG, ranked by the judge. Candidates the
/// oracle cannot produce are skipped; with none left the answer is a
/// no-evidence disclaimer.
pub fn generate_final_answer(
    gateway: &OracleGateway,
    question: &str,
    dags: &[ReasoningDag],
    budget: usize,
) -> Result<FinalAnswer> {
    let mut candidates = Vec::new();
    for dag in dags {
        let context = aggregate_dag_knowledge(dag, budget);
        match gateway.candidate_answer(CallSite::Generation, question, &context, false) {
            Ok(Outcome::Answer(r)) => candidates.push(CandidateAnswer {
                answer: r.answer.trim().to_string(),
                source_dag_digest: dag.digest(),
                aggregated_context: context,
            }),
            Ok(Outcome::Refused(reason)) => {
                warn!(%reason, dag = %dag.digest(), "candidate refused")
            }
            Err(e @ Error::BackendUnreachable(_)) => return Err(e),
            Err(e) => warn!(error = %e, dag = %dag.digest(), "candidate failed"),
        }
    }
    if candidates.is_empty() {
        return no_evidence(gateway, question);
    }
    if candidates.len() > 1 {
        let briefs = candidates
            .iter()
            .enumerate()
            .map(|(index, c)| CandidateBrief {
                index,
                answer: c.answer.clone(),
                context: c.aggregated_context.clone(),
            })
            .collect();
        match gateway.rank_candidates(CallSite::Generation, question, briefs) {
            Ok(Outcome::Answer(r)) => {
                let mut order: Vec<usize> = Vec::new();
                for i in r.ranking {
                    if i < candidates.len() && !order.contains(&i) {
                        order.push(i);
                    }
                }
                let missing: Vec<usize> = (0..candidates.len())
                    .filter(|i| !order.contains(i))
                    .collect();
                order.extend(missing);
                candidates = order.into_iter().map(|i| candidates[i].clone()).collect();
            }
            Ok(Outcome::Refused(reason)) => {
                warn!(%reason, "judge refused, keeping generation order")
            }
            Err(e @ Error::BackendUnreachable(_)) => return Err(e),
            Err(e) => warn!(error = %e, "judge failed, keeping generation order"),
        }
    }
    Ok(FinalAnswer {
        answer: candidates[0].answer.clone(),
        candidates,
        no_evidence: false,
    })
}
