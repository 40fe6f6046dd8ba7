//! Seeded workload generators shared by the benchmarks.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hyperplan_core::planning::{build_reasoning_dag, ReasoningDag};
use hyperplan_core::reasoning::{advance_dag, StepResolver};
use hyperplan_core::{
    AnswerPathPair, EdgeKind, EntityId, GraphBuilder, HyperedgeId, KnowledgeHypergraph,
    ReasoningPath, ReasoningPlan, Result, Subquestion,
};

/// Random hypergraph with `entities` entities and `edges` hyperedges of
/// arity 2..=`max_arity`.
pub fn random_graph(
    seed: u64,
    entities: usize,
    edges: usize,
    max_arity: usize,
) -> KnowledgeHypergraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::new();
    let ids: Vec<EntityId> = (0..entities)
        .map(|i| {
            b.add_entity(
                &format!("entity {i}"),
                &format!("description of entity {i}"),
            )
            .expect("valid name")
        })
        .collect();
    for j in 0..edges {
        let arity = rng.gen_range(2..=max_arity.min(entities).max(2));
        let members = ids.choose_multiple(&mut rng, arity).copied().collect();
        b.add_edge(&format!("fact {j}"), members, None, EdgeKind::Fact)
            .expect("valid edge");
    }
    b.freeze()
}

/// Uniform random entity weights in [0, 1).
pub fn random_weights(seed: u64, g: &KnowledgeHypergraph) -> BTreeMap<EntityId, f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    g.entity_ids()
        .map(|v| (v, rng.gen_range(0.0..1.0)))
        .collect()
}

/// Random dependency set over `n` nodes, acyclic by construction.
pub fn random_deps(seed: u64, n: usize, density: f64) -> BTreeSet<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).collect();
    labels.shuffle(&mut rng);
    let mut deps = BTreeSet::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(density) {
                deps.insert((labels[i], labels[j]));
            }
        }
    }
    deps
}

/// `plans` chains of `len` subquestions each.
pub fn chain_dags(plans: usize, len: usize) -> Vec<ReasoningDag> {
    (0..plans)
        .map(|p| {
            let subs = (0..len)
                .map(|i| Subquestion::new(i, format!("plan {p} step {i}"), vec![]))
                .collect();
            let plan =
                ReasoningPlan::new(subs, (1..len).map(|i| (i - 1, i))).expect("chain is acyclic");
            build_reasoning_dag("benchmark question", plan).expect("valid plan")
        })
        .collect()
}

/// Answers every subquestion with `fanout` fixed pairs.
pub struct FanoutResolver {
    pub fanout: usize,
}

impl StepResolver for FanoutResolver {
    fn resolve(&mut self, _: &ReasoningDag, id: usize) -> Result<Vec<AnswerPathPair>> {
        Ok((0..self.fanout)
            .map(|k| AnswerPathPair {
                answer: format!("answer {id}.{k}"),
                path: ReasoningPath::single(HyperedgeId(k as u32)),
                score: 1.0 / (k + 1) as f64,
                context_digest: String::new(),
                context: String::new(),
            })
            .collect())
    }

    fn refine(
        &mut self,
        dag: &ReasoningDag,
        assignment: &BTreeMap<usize, AnswerPathPair>,
    ) -> Result<ReasoningDag> {
        Ok(advance_dag(dag, assignment))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_seeded() {
        let a = random_graph(3, 50, 80, 4);
        let b = random_graph(3, 50, 80, 4);
        assert_eq!(a.content_hash(), b.content_hash());
        assert_eq!(a.edge_count(), 80);
        assert_eq!(random_deps(1, 8, 0.3), random_deps(1, 8, 0.3));
        assert_eq!(chain_dags(2, 3)[0].levels.len(), 3);
    }
}
