//! State-space search over partially completed reasoning DAGs.
//!
//! A state is a DAG whose first `completed_level + 1` levels are answered.
//! Expanding a state resolves every subquestion of the next level, forms
//! the joint answer assignments and lets the oracle refine the remaining
//! plan for each one. DFS pops the newest state, BFS the oldest.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::error::{Error, Result};
use crate::oracle::{CallSite, OracleGateway, Outcome, RefineNode};
use crate::planning::{hasse_reduce, ReasoningDag, ReasoningPlan};
use crate::retrieval::AnswerPathPair;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchStrategy {
    #[default]
    Dfs,
    Bfs,
}

impl std::str::FromStr for SearchStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dfs" => Ok(SearchStrategy::Dfs),
            "bfs" => Ok(SearchStrategy::Bfs),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?} (dfs or bfs)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    pub states_visited: usize,
    pub peak_frontier_width: usize,
    /// Deepest level index reached by a visited state.
    pub peak_depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonConfig {
    /// Stop after this many completed DAGs.
    pub k: usize,
    pub strategy: SearchStrategy,
    /// Joint assignments kept per state.
    pub branch_cap: usize,
}

impl Default for ReasonConfig {
    fn default() -> Self {
        Self {
            k: 2,
            strategy: SearchStrategy::Dfs,
            branch_cap: 6,
        }
    }
}

/// Answers subquestions and refines DAGs on behalf of the search.
pub trait StepResolver {
    fn resolve(&mut self, dag: &ReasoningDag, subquestion: usize) -> Result<Vec<AnswerPathPair>>;
    fn refine(
        &mut self,
        dag: &ReasoningDag,
        assignment: &BTreeMap<usize, AnswerPathPair>,
    ) -> Result<ReasoningDag>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateAction {
    Complete,
    Expand,
    Prune,
}

/// One trace line per visited state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub dag_digest: String,
    pub level: usize,
    pub action: StateAction,
    pub successors: usize,
    pub stats: SearchStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReasonOutcome {
    pub completed: Vec<ReasoningDag>,
    pub stats: SearchStats,
    pub trace: Vec<TraceRecord>,
}

fn pair_order(a: &AnswerPathPair, b: &AnswerPathPair) -> Ordering {
    a.answer.cmp(&b.answer).then(a.path.cmp(&b.path))
}

/// Wrapper giving `f64` a total order for the k-best heap.
#[derive(Debug, PartialEq)]
struct Ranked(f64, Vec<usize>);

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .total_cmp(&other.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

/// One answer-path pair per subquestion. Pairs are ordered by answer text
/// then path and subquestions by id; assignments come out in that
/// lexicographic order. When the full product exceeds `cap`, the `cap`
/// assignments with the highest summed path score are kept.
pub fn joint_assignments(
    ap: &BTreeMap<usize, Vec<AnswerPathPair>>,
    cap: usize,
) -> Vec<BTreeMap<usize, AnswerPathPair>> {
    if ap.is_empty() || ap.values().any(Vec::is_empty) || cap == 0 {
        return Vec::new();
    }
    let ids: Vec<usize> = ap.keys().copied().collect();
    let sets: Vec<Vec<&AnswerPathPair>> = ap
        .values()
        .map(|v| {
            let mut s: Vec<&AnswerPathPair> = v.iter().collect();
            s.sort_by(|a, b| pair_order(a, b));
            s
        })
        .collect();
    let total = sets
        .iter()
        .try_fold(1usize, |acc, s| acc.checked_mul(s.len()));
    let mut picks: Vec<Vec<usize>> = if total.is_some_and(|t| t <= cap) {
        let mut all = vec![Vec::new()];
        for s in &sets {
            all = all
                .into_iter()
                .flat_map(|prefix| {
                    (0..s.len()).map(move |i| {
                        let mut p = prefix.clone();
                        p.push(i);
                        p
                    })
                })
                .collect();
        }
        all
    } else {
        // Best-first over index vectors into score-sorted lists.
        let by_score: Vec<Vec<usize>> = sets
            .iter()
            .map(|s| {
                let mut idx: Vec<usize> = (0..s.len()).collect();
                idx.sort_by(|&a, &b| s[b].score.total_cmp(&s[a].score).then(a.cmp(&b)));
                idx
            })
            .collect();
        let score = |pos: &[usize]| -> f64 {
            pos.iter()
                .enumerate()
                .map(|(k, &p)| sets[k][by_score[k][p]].score)
                .sum()
        };
        let start = vec![0usize; sets.len()];
        let mut heap = BinaryHeap::from([Ranked(score(&start), start.clone())]);
        let mut seen = HashSet::from([start]);
        let mut out = Vec::new();
        while let Some(Ranked(_, pos)) = heap.pop() {
            out.push(
                pos.iter()
                    .enumerate()
                    .map(|(k, &p)| by_score[k][p])
                    .collect::<Vec<_>>(),
            );
            if out.len() == cap {
                break;
            }
            for k in 0..pos.len() {
                if pos[k] + 1 < sets[k].len() {
                    let mut next = pos.clone();
                    next[k] += 1;
                    if seen.insert(next.clone()) {
                        heap.push(Ranked(score(&next), next));
                    }
                }
            }
        }
        out
    };
    picks.sort();
    picks
        .into_iter()
        .map(|p| {
            ids.iter()
                .zip(p)
                .map(|(id, i)| {
                    (
                        *id,
                        sets[ids.iter().position(|x| x == id).unwrap()][i].clone(),
                    )
                })
                .collect()
        })
        .collect()
}

/// Records the chosen pairs and marks the next level complete, leaving
/// the rest of the plan unchanged.
pub fn advance_dag(
    dag: &ReasoningDag,
    assignment: &BTreeMap<usize, AnswerPathPair>,
) -> ReasoningDag {
    let mut next = dag.clone();
    for (id, pair) in assignment {
        next.ap.insert(*id, vec![pair.clone()]);
    }
    next.completed_level += 1;
    next
}

/// Checks that `proposal` keeps every completed subquestion (same id, text
/// and topics) and exactly the dependencies leading into them.
pub fn validate_refinement(
    advanced: &ReasoningDag,
    proposal: ReasoningPlan,
) -> Result<ReasoningPlan> {
    let proposal = proposal.validated()?;
    for s in &advanced.plan.subquestions {
        if !advanced.is_completed_node(s.id) {
            continue;
        }
        match proposal.subquestion(s.id) {
            Some(p) if p.text == s.text && p.topics == s.topics => {}
            _ => {
                return Err(Error::InvalidPlan(format!(
                    "completed subquestion {} was changed or removed",
                    s.id
                )))
            }
        }
    }
    let into_completed = |deps: &BTreeSet<(usize, usize)>| -> BTreeSet<(usize, usize)> {
        deps.iter()
            .copied()
            .filter(|(_, b)| advanced.is_completed_node(*b))
            .collect()
    };
    if into_completed(&hasse_reduce(&proposal.deps)?) != into_completed(&advanced.plan.deps) {
        return Err(Error::InvalidPlan(
            "dependencies of completed subquestions changed".into(),
        ));
    }
    Ok(proposal)
}

/// Advances `dag` with `assignment` and asks the oracle to revise the
/// open part of the plan. A refusal, or an invalid proposal after one
/// re-ask, leaves the open part as it was.
pub fn refine_dag(
    dag: &ReasoningDag,
    assignment: &BTreeMap<usize, AnswerPathPair>,
    gateway: &OracleGateway,
) -> Result<ReasoningDag> {
    let advanced = advance_dag(dag, assignment);
    if advanced.is_complete() {
        return Ok(advanced);
    }
    let nodes: Vec<RefineNode> = advanced
        .plan
        .subquestions
        .iter()
        .map(|s| RefineNode {
            id: s.id,
            text: s.text.clone(),
            topics: s.topics.clone(),
            completed: advanced.is_completed_node(s.id),
            answer: advanced
                .ap
                .get(&s.id)
                .and_then(|v| v.first())
                .map(|p| p.answer.clone()),
        })
        .collect();
    let completed_level = advanced.completed_level as usize;
    for attempt in 0..2 {
        let reply = gateway.refine_plan(
            CallSite::Reasoning,
            &advanced.question,
            nodes.clone(),
            advanced.edges(),
            completed_level,
        );
        let proposal = match reply {
            Ok(Outcome::Answer(r)) => r.plan,
            Ok(Outcome::Refused(reason)) => {
                debug!(%reason, "refinement refused, keeping plan");
                return Ok(advanced);
            }
            Err(e @ Error::BackendUnreachable(_)) => return Err(e),
            Err(e) => {
                warn!(error = %e, "refinement failed, keeping plan");
                return Ok(advanced);
            }
        };
        match validate_refinement(&advanced, proposal).and_then(|p| advanced.with_plan(p)) {
            Ok(refined) => return Ok(refined),
            Err(e) => warn!(attempt, error = %e, "refinement rejected"),
        }
    }
    Ok(advanced)
}

/// Searches from the initial DAGs until `k` DAGs are complete or the
/// frontier runs dry.
pub fn reason(
    initial: Vec<ReasoningDag>,
    cfg: &ReasonConfig,
    resolver: &mut dyn StepResolver,
) -> Result<ReasonOutcome> {
    let mut stats = SearchStats::default();
    let mut frontier: VecDeque<ReasoningDag> = VecDeque::new();
    let push_all =
        |frontier: &mut VecDeque<ReasoningDag>, states: Vec<ReasoningDag>| match cfg.strategy {
            // LIFO: push in reverse so the first state is popped first.
            SearchStrategy::Dfs => frontier.extend(states.into_iter().rev()),
            SearchStrategy::Bfs => frontier.extend(states),
        };
    push_all(&mut frontier, initial);
    stats.peak_frontier_width = frontier.len();
    let mut completed = Vec::new();
    let mut trace = Vec::new();

    while completed.len() < cfg.k.max(1) {
        let state = match cfg.strategy {
            SearchStrategy::Dfs => frontier.pop_back(),
            SearchStrategy::Bfs => frontier.pop_front(),
        };
        let Some(dag) = state else { break };
        stats.states_visited += 1;
        let level = dag.next_level();
        stats.peak_depth = stats.peak_depth.max(level);
        let digest = dag.digest();

        let (action, successors) = if dag.is_complete() {
            completed.push(dag);
            (StateAction::Complete, 0)
        } else {
            let mut ap = BTreeMap::new();
            let mut dead = false;
            for &id in &dag.levels[level] {
                let pairs = resolver.resolve(&dag, id)?;
                if pairs.is_empty() {
                    dead = true;
                    break;
                }
                ap.insert(id, pairs);
            }
            if dead {
                (StateAction::Prune, 0)
            } else {
                let mut next = Vec::new();
                for assignment in joint_assignments(&ap, cfg.branch_cap) {
                    next.push(resolver.refine(&dag, &assignment)?);
                }
                let n = next.len();
                push_all(&mut frontier, next);
                stats.peak_frontier_width = stats.peak_frontier_width.max(frontier.len());
                (
                    if n == 0 {
                        StateAction::Prune
                    } else {
                        StateAction::Expand
                    },
                    n,
                )
            }
        };
        trace.push(TraceRecord {
            step: stats.states_visited,
            dag_digest: digest,
            level,
            action,
            successors,
            stats,
        });
    }
    Ok(ReasonOutcome {
        completed,
        stats,
        trace,
    })
}
