//! Iterative-deepening beam search over reasoning paths.
//!
//! Depth `d` works on paths of `d` hyperedges. Depth 1 ranks the seed edges
//! themselves; every later depth extends the surviving frontier by one
//! neighboring edge, ranks the extensions by EWO and keeps the beam. The
//! search returns at the first depth whose candidate paths pass path
//! selection.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::Serialize;
use tracing::warn;

use super::{ewo_score, path_score};
use crate::error::Result;
use crate::graph::{EntityId, HyperedgeId, KnowledgeHypergraph, ReasoningPath};
use crate::oracle::{CallSite, DirectionOption, OracleGateway, Outcome, PathOption};
use crate::planning::Aggregator;

/// A partial path proposed as the next search direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredDirection {
    pub path: ReasoningPath,
    pub terminal: HyperedgeId,
    pub ewo: f64,
}

/// The three decisions the search delegates.
pub trait BeamPolicy {
    fn entity_weight(&mut self, v: EntityId) -> Result<f64>;

    /// `ranked` is ordered by EWO descending; returns the kept directions.
    fn select_directions(
        &mut self,
        ranked: Vec<ScoredDirection>,
        beam: Option<usize>,
    ) -> Result<Vec<ScoredDirection>> {
        Ok(top_b(ranked, beam))
    }

    /// `ranked` is ordered by path score descending; returns the paths
    /// judged sufficient.
    fn select_paths(
        &mut self,
        ranked: Vec<(ReasoningPath, f64)>,
    ) -> Result<Vec<(ReasoningPath, f64)>> {
        Ok(lite_select_paths(ranked))
    }
}

pub fn top_b(mut ranked: Vec<ScoredDirection>, beam: Option<usize>) -> Vec<ScoredDirection> {
    if let Some(b) = beam {
        ranked.truncate(b);
    }
    ranked
}

/// Paths scoring at least the median of the shortlist.
pub fn lite_select_paths(ranked: Vec<(ReasoningPath, f64)>) -> Vec<(ReasoningPath, f64)> {
    if ranked.is_empty() {
        return ranked;
    }
    let mut scores: Vec<f64> = ranked.iter().map(|p| p.1).collect();
    scores.sort_by(f64::total_cmp);
    let n = scores.len();
    let median = if n % 2 == 1 {
        scores[n / 2]
    } else {
        (scores[n / 2 - 1] + scores[n / 2]) / 2.0
    };
    ranked.into_iter().filter(|p| p.1 >= median).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BeamParams {
    pub d_max: usize,
    /// `None` keeps every direction.
    pub beam: Option<usize>,
    /// Paths offered to path selection; `None` offers all.
    pub shortlist: Option<usize>,
    pub aggregator: Aggregator,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeamOutcome {
    pub selected: Vec<(ReasoningPath, f64)>,
    /// Depth at which selection succeeded.
    pub depth: Option<usize>,
    /// Every edge that was the terminal of a kept direction or a seed.
    pub visited: BTreeSet<HyperedgeId>,
}

fn rank_directions(a: &ScoredDirection, b: &ScoredDirection) -> Ordering {
    b.ewo
        .partial_cmp(&a.ewo)
        .unwrap_or(Ordering::Equal)
        .then(a.terminal.cmp(&b.terminal))
        .then(a.path.cmp(&b.path))
}

fn rank_paths(a: &(ReasoningPath, f64), b: &(ReasoningPath, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then(a.0.cmp(&b.0))
}

pub fn beam_search(
    g: &KnowledgeHypergraph,
    seeds: &BTreeSet<HyperedgeId>,
    targets: &BTreeSet<HyperedgeId>,
    params: &BeamParams,
    policy: &mut dyn BeamPolicy,
) -> Result<BeamOutcome> {
    let mut visited: BTreeSet<HyperedgeId> = seeds.clone();
    let mut frontier: Vec<ReasoningPath> =
        seeds.iter().map(|e| ReasoningPath::single(*e)).collect();
    for d in 1..=params.d_max {
        if d > 1 {
            let mut candidates = Vec::new();
            for p in &frontier {
                let last = p.terminal();
                for n in g.neighbors(last)? {
                    if p.contains(n) {
                        continue;
                    }
                    let ewo = ewo_score(
                        g,
                        n,
                        last,
                        &mut |v| policy.entity_weight(v),
                        params.aggregator,
                    )?;
                    candidates.push(ScoredDirection {
                        path: p.extended(n)?,
                        terminal: n,
                        ewo,
                    });
                }
            }
            candidates.sort_by(rank_directions);
            let kept = policy.select_directions(candidates, params.beam)?;
            frontier = kept.into_iter().map(|c| c.path).collect();
            visited.extend(frontier.iter().map(ReasoningPath::terminal));
        }
        if frontier.is_empty() {
            break;
        }
        let mut paths: BTreeSet<ReasoningPath> = frontier.iter().cloned().collect();
        for p in &frontier {
            for (i, e) in p.edges().iter().enumerate() {
                if targets.contains(e) {
                    paths.insert(p.prefix(i + 1).expect("in range"));
                }
            }
        }
        let mut ranked = Vec::with_capacity(paths.len());
        for p in paths {
            let sp = path_score(g, &p, &mut |v| policy.entity_weight(v), params.aggregator)?;
            ranked.push((p, sp));
        }
        ranked.sort_by(rank_paths);
        if let Some(m) = params.shortlist {
            ranked.truncate(m);
        }
        let selected = policy.select_paths(ranked)?;
        if !selected.is_empty() {
            return Ok(BeamOutcome {
                selected,
                depth: Some(d),
                visited,
            });
        }
    }
    Ok(BeamOutcome {
        selected: Vec::new(),
        depth: None,
        visited,
    })
}

fn edge_names(g: &KnowledgeHypergraph, p: &ReasoningPath) -> Vec<String> {
    p.edges()
        .iter()
        .map(|e| g.edge(*e).map(|x| x.name.clone()).unwrap_or_default())
        .collect()
}

/// Shows the top `2b` directions to the oracle and keeps its picks (at
/// most `b`, invalid indices dropped). Falls back to the top `b` when the
/// oracle fails or refuses. With no more than `b` candidates there is
/// nothing to choose and the oracle is not asked.
pub fn oracle_select_directions(
    gateway: &OracleGateway,
    g: &KnowledgeHypergraph,
    question: &str,
    ranked: Vec<ScoredDirection>,
    beam: Option<usize>,
) -> Vec<ScoredDirection> {
    let Some(b) = beam else { return ranked };
    if ranked.len() <= b {
        return ranked;
    }
    let shortlist: Vec<ScoredDirection> = ranked.iter().take(2 * b).cloned().collect();
    let options = shortlist
        .iter()
        .enumerate()
        .map(|(index, c)| DirectionOption {
            index,
            path: edge_names(g, &c.path),
            ewo: c.ewo,
        })
        .collect();
    match gateway.select_directions(CallSite::Retrieval, question, options, b) {
        Ok(Outcome::Answer(r)) => {
            let mut seen = BTreeSet::new();
            r.picks
                .into_iter()
                .filter(|i| *i < shortlist.len() && seen.insert(*i))
                .take(b)
                .map(|i| shortlist[i].clone())
                .collect()
        }
        Ok(Outcome::Refused(reason)) => {
            warn!(%reason, "direction selection refused, keeping top b");
            top_b(ranked, beam)
        }
        Err(e) => {
            warn!(error = %e, "direction selection failed, keeping top b");
            top_b(ranked, beam)
        }
    }
}

/// Paths the oracle marks as sufficient; empty on failure.
pub fn oracle_select_paths(
    gateway: &OracleGateway,
    g: &KnowledgeHypergraph,
    question: &str,
    ranked: Vec<(ReasoningPath, f64)>,
) -> Vec<(ReasoningPath, f64)> {
    if ranked.is_empty() {
        return ranked;
    }
    let options = ranked
        .iter()
        .enumerate()
        .map(|(index, (p, score))| PathOption {
            index,
            path: edge_names(g, p),
            score: *score,
        })
        .collect();
    match gateway.select_paths(CallSite::Retrieval, question, options) {
        Ok(Outcome::Answer(r)) => {
            let picked: BTreeSet<usize> = r
                .selected
                .into_iter()
                .filter(|i| *i < ranked.len())
                .collect();
            picked.into_iter().map(|i| ranked[i].clone()).collect()
        }
        Ok(Outcome::Refused(_)) => Vec::new(),
        Err(e) => {
            warn!(error = %e, "path selection failed");
            Vec::new()
        }
    }
}
