//! Reasoning plans and reasoning DAGs.
//!
//! A [`ReasoningPlan`] is a set of subquestions with dependency pairs. It is
//! turned into a [`ReasoningDag`] by transitive reduction ([`hasse_reduce`])
//! and longest-path leveling: a subquestion sits one level above its
//! deepest prerequisite.

mod context;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::retrieval::AnswerPathPair;

pub use context::{
    build_plan_context_graph, build_plan_context_graph_with, form_plan_context,
    propose_initial_plans, score_entity_embedding, score_hyperedge, PlanContextGraph,
};

pub const MAX_SUBQUESTION_CHARS: usize = 300;

/// How per-entity scores are combined over an overlap or a path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    #[default]
    Mean,
    Max,
    Sum,
}

impl Aggregator {
    /// `None` for an empty input.
    pub fn apply(self, values: impl IntoIterator<Item = f64>) -> Option<f64> {
        let mut n = 0usize;
        let mut sum = 0.0;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            n += 1;
            sum += v;
            max = max.max(v);
        }
        (n > 0).then(|| match self {
            Aggregator::Mean => sum / n as f64,
            Aggregator::Max => max,
            Aggregator::Sum => sum,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subquestion {
    pub id: usize,
    pub text: String,
    #[serde(default)]
    pub topics: Vec<String>,
    /// Assigned when the plan becomes a DAG.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<usize>,
}

impl Subquestion {
    pub fn new(id: usize, text: impl Into<String>, topics: Vec<String>) -> Self {
        Self {
            id,
            text: text.into(),
            topics,
            level: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningPlan {
    pub subquestions: Vec<Subquestion>,
    #[serde(default)]
    pub deps: BTreeSet<(usize, usize)>,
}

impl ReasoningPlan {
    /// One-node plan asking the question itself.
    pub fn single(question: &str) -> Self {
        ReasoningPlan {
            subquestions: vec![Subquestion::new(0, question.trim(), vec![])],
            deps: BTreeSet::new(),
        }
    }

    pub fn new(
        subquestions: Vec<Subquestion>,
        deps: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        Self {
            subquestions,
            deps: deps.into_iter().collect(),
        }
        .validated()
    }

    pub fn len(&self) -> usize {
        self.subquestions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subquestions.is_empty()
    }

    pub fn subquestion(&self, id: usize) -> Option<&Subquestion> {
        self.subquestions.get(id).filter(|s| s.id == id)
    }

    /// Checks the plan rules and returns it with subquestions sorted by id:
    /// ids dense from 0, non-empty texts of at most
    /// [`MAX_SUBQUESTION_CHARS`], deps between known ids, no self-loops,
    /// no cycles.
    pub fn validated(mut self) -> Result<Self> {
        if self.subquestions.is_empty() {
            return Err(Error::InvalidPlan("no subquestions".into()));
        }
        self.subquestions.sort_by_key(|s| s.id);
        for (i, s) in self.subquestions.iter().enumerate() {
            if s.id != i {
                return Err(Error::InvalidPlan(format!(
                    "subquestion ids must be dense from 0, found {}",
                    s.id
                )));
            }
            if s.text.trim().is_empty() {
                return Err(Error::InvalidPlan(format!("subquestion {i} has no text")));
            }
            if s.text.chars().count() > MAX_SUBQUESTION_CHARS {
                return Err(Error::InvalidPlan(format!(
                    "subquestion {i} is longer than {MAX_SUBQUESTION_CHARS} chars"
                )));
            }
        }
        let n = self.subquestions.len();
        for &(a, b) in &self.deps {
            if a >= n || b >= n {
                return Err(Error::InvalidPlan(format!(
                    "dependency ({a}, {b}) references an unknown subquestion"
                )));
            }
            if a == b {
                return Err(Error::InvalidPlan(format!("self-dependency on {a}")));
            }
        }
        if let Some(cycle) = find_cycle(&self.deps) {
            return Err(Error::Cycle(cycle));
        }
        Ok(self)
    }
}

fn adjacency(deps: &BTreeSet<(usize, usize)>) -> BTreeMap<usize, Vec<usize>> {
    let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(a, b) in deps {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default();
    }
    adj
}

/// One directed cycle as `[n0, n1, ..., n0]`, if any.
pub fn find_cycle(deps: &BTreeSet<(usize, usize)>) -> Option<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let adj = adjacency(deps);
    let mut mark: BTreeMap<usize, Mark> = adj.keys().map(|&k| (k, Mark::New)).collect();
    for &root in adj.keys() {
        if mark[&root] != Mark::New {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        mark.insert(root, Mark::Active);
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if let Some(&child) = adj[&node].get(*next) {
                *next += 1;
                match mark[&child] {
                    Mark::New => {
                        mark.insert(child, Mark::Active);
                        stack.push((child, 0));
                    }
                    Mark::Active => {
                        let start = stack
                            .iter()
                            .position(|(n, _)| *n == child)
                            .expect("active node on stack");
                        let mut cycle: Vec<usize> =
                            stack[start..].iter().map(|(n, _)| *n).collect();
                        cycle.push(child);
                        return Some(cycle);
                    }
                    Mark::Done => {}
                }
            } else {
                mark.insert(node, Mark::Done);
                stack.pop();
            }
        }
    }
    None
}

fn reachable_from(
    adj: &BTreeMap<usize, Vec<usize>>,
    start: usize,
    skip_edge: Option<(usize, usize)>,
) -> BTreeSet<usize> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![start];
    while let Some(n) = stack.pop() {
        for &m in adj.get(&n).map(Vec::as_slice).unwrap_or_default() {
            if Some((n, m)) == skip_edge {
                continue;
            }
            if seen.insert(m) {
                stack.push(m);
            }
        }
    }
    seen
}

/// Transitive reduction: drops `(i, j)` when `j` is also reachable from `i`
/// through a longer path.
pub fn hasse_reduce(deps: &BTreeSet<(usize, usize)>) -> Result<BTreeSet<(usize, usize)>> {
    if let Some(cycle) = find_cycle(deps) {
        return Err(Error::Cycle(cycle));
    }
    let adj = adjacency(deps);
    let mut out = BTreeSet::new();
    for (&i, succ) in &adj {
        // Nodes reachable from i in at least two steps.
        let mut indirect = BTreeSet::new();
        for &k in succ {
            indirect.extend(reachable_from(&adj, k, None));
        }
        for &j in succ {
            if !indirect.contains(&j) {
                out.insert((i, j));
            }
        }
    }
    Ok(out)
}

/// Longest-path level per node: sources are 0, every other node is one
/// above its deepest predecessor. `deps` must be acyclic.
pub fn longest_path_levels(n: usize, deps: &BTreeSet<(usize, usize)>) -> Vec<usize> {
    let mut level = vec![0usize; n];
    let mut indeg = vec![0usize; n];
    let adj = adjacency(deps);
    for &(_, b) in deps {
        indeg[b] += 1;
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    while let Some(i) = ready.pop() {
        for &j in adj.get(&i).map(Vec::as_slice).unwrap_or_default() {
            level[j] = level[j].max(level[i] + 1);
            indeg[j] -= 1;
            if indeg[j] == 0 {
                ready.push(j);
            }
        }
    }
    level
}

fn group_levels(level: &[usize]) -> Vec<Vec<usize>> {
    let depth = level.iter().max().map_or(0, |m| m + 1);
    let mut levels = vec![Vec::new(); depth];
    for (id, &l) in level.iter().enumerate() {
        levels[l].push(id);
    }
    levels
}

/// A reasoning plan with reduced dependencies and levels. Holds the
/// answer-path pairs gathered so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningDag {
    pub question: String,
    pub plan: ReasoningPlan,
    pub levels: Vec<Vec<usize>>,
    pub ap: BTreeMap<usize, Vec<AnswerPathPair>>,
    /// Highest fully answered level, `-1` before any progress.
    pub completed_level: i64,
}

/// Validates `plan`, reduces its dependencies and assigns levels.
pub fn build_reasoning_dag(question: &str, plan: ReasoningPlan) -> Result<ReasoningDag> {
    let mut plan = plan.validated()?;
    plan.deps = hasse_reduce(&plan.deps)?;
    let level = longest_path_levels(plan.len(), &plan.deps);
    for s in &mut plan.subquestions {
        s.level = Some(level[s.id]);
    }
    Ok(ReasoningDag {
        question: question.to_string(),
        levels: group_levels(&level),
        plan,
        ap: BTreeMap::new(),
        completed_level: -1,
    })
}

impl ReasoningDag {
    /// Index of the next level to resolve.
    pub fn next_level(&self) -> usize {
        (self.completed_level + 1) as usize
    }

    pub fn is_complete(&self) -> bool {
        self.next_level() >= self.levels.len()
    }

    pub fn level_of(&self, id: usize) -> Option<usize> {
        self.plan.subquestion(id).and_then(|s| s.level)
    }

    pub fn is_completed_node(&self, id: usize) -> bool {
        self.level_of(id)
            .is_some_and(|l| (l as i64) <= self.completed_level)
    }

    pub fn predecessors(&self, id: usize) -> Vec<usize> {
        self.plan
            .deps
            .iter()
            .filter(|(_, b)| *b == id)
            .map(|(a, _)| *a)
            .collect()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.plan.deps.iter().copied().collect()
    }

    /// Short content digest used in traces and candidate answers.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("dag serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    /// Replaces the plan while keeping completed levels, then re-levels the
    /// open part: an open node sits at `max(completed + 1, deepest
    /// predecessor + 1)`.
    pub(crate) fn with_plan(&self, plan: ReasoningPlan) -> Result<Self> {
        let mut plan = plan.validated()?;
        plan.deps = hasse_reduce(&plan.deps)?;
        let n = plan.len();
        let first_open = self.next_level();
        let mut level: Vec<Option<usize>> = plan
            .subquestions
            .iter()
            .map(|s| {
                self.is_completed_node(s.id)
                    .then(|| self.level_of(s.id))
                    .flatten()
            })
            .collect();
        let open_levels = longest_path_levels(n, &plan.deps);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| open_levels[i]);
        for i in order {
            if level[i].is_some() {
                continue;
            }
            let deepest = plan
                .deps
                .iter()
                .filter(|(_, b)| *b == i)
                .map(|(a, _)| level[*a].expect("predecessors are leveled first") + 1)
                .max()
                .unwrap_or(0);
            level[i] = Some(deepest.max(first_open));
        }
        let level: Vec<usize> = level
            .into_iter()
            .map(|l| l.expect("every node leveled"))
            .collect();
        for s in &mut plan.subquestions {
            s.level = Some(level[s.id]);
        }
        let ap = self
            .ap
            .iter()
            .filter(|(id, _)| **id < n)
            .map(|(k, v)| (*k, v.clone()))
            .collect();
        Ok(Self {
            question: self.question.clone(),
            levels: group_levels(&level),
            plan,
            ap,
            completed_level: self.completed_level,
        })
    }

    /// Checks the leveling law and the completed-DAG answer rule.
    pub fn check(&self) -> Result<()> {
        for &(a, b) in &self.plan.deps {
            match (self.level_of(a), self.level_of(b)) {
                (Some(la), Some(lb)) if la < lb => {}
                _ => {
                    return Err(Error::InvalidPlan(format!(
                        "dependency ({a}, {b}) does not go up a level"
                    )))
                }
            }
        }
        for s in &self.plan.subquestions {
            let answered = self.ap.get(&s.id).is_some_and(|v| !v.is_empty());
            if answered != self.is_completed_node(s.id) {
                return Err(Error::InvalidPlan(format!(
                    "subquestion {} answer state disagrees with its level",
                    s.id
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn gaap_plan() -> ReasoningPlan {
        ReasoningPlan::new(
            vec![
                Subquestion::new(0, "What does GAAP stand for?", vec!["GAAP".into()]),
                Subquestion::new(
                    1,
                    "What standards do GAAP require for financial reporting?",
                    vec!["GAAP".into(), "FINANCIAL REPORTING".into()],
                ),
                Subquestion::new(
                    2,
                    "What standards do GAAP require for tax reporting?",
                    vec!["GAAP".into(), "TAX REPORTING".into()],
                ),
            ],
            [(0, 1), (0, 2)],
        )
        .unwrap()
    }

    fn set(pairs: &[(usize, usize)]) -> BTreeSet<(usize, usize)> {
        pairs.iter().copied().collect()
    }

    fn chain(n: usize) -> ReasoningPlan {
        ReasoningPlan::new(
            (0..n)
                .map(|i| Subquestion::new(i, format!("q{i}"), vec![]))
                .collect(),
            (1..n).map(|i| (i - 1, i)),
        )
        .unwrap()
    }

    #[test]
    fn hasse_examples() {
        assert_eq!(
            hasse_reduce(&set(&[(0, 1), (1, 2), (0, 2)])).unwrap(),
            set(&[(0, 1), (1, 2)])
        );
        assert_eq!(
            hasse_reduce(&set(&[(0, 1), (0, 2)])).unwrap(),
            set(&[(0, 1), (0, 2)])
        );
        assert!(hasse_reduce(&BTreeSet::new()).unwrap().is_empty());
    }

    #[test]
    fn cycle_error_names_the_cycle() {
        let err = hasse_reduce(&set(&[(0, 1), (1, 2), (2, 0), (2, 3)])).unwrap_err();
        match err {
            Error::Cycle(c) => {
                assert_eq!(c.first(), c.last());
                assert_eq!(c.len(), 4);
                for w in c.windows(2) {
                    assert!(set(&[(0, 1), (1, 2), (2, 0)]).contains(&(w[0], w[1])));
                }
            }
            other => panic!("{other}"),
        }
        assert!(err_string(&set(&[(3, 3)])).contains("3 -> 3"));
    }

    fn err_string(deps: &BTreeSet<(usize, usize)>) -> String {
        hasse_reduce(deps).unwrap_err().to_string()
    }

    #[test]
    fn dag_levels() {
        let gaap = build_reasoning_dag("q", gaap_plan()).unwrap();
        assert_eq!(gaap.levels, vec![vec![0], vec![1, 2]]);
        assert_eq!(gaap.completed_level, -1);
        assert!(gaap.ap.is_empty());
        let single = build_reasoning_dag("q", ReasoningPlan::single("q")).unwrap();
        assert_eq!(single.levels, vec![vec![0]]);
        let c = build_reasoning_dag("q", chain(3)).unwrap();
        assert_eq!(c.levels, vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn longest_path_not_shortest() {
        // 0 -> 1 -> 2 and 0 -> 3 -> 2 plus 4 -> 2: node 2 sits above 1 and 3.
        let plan = ReasoningPlan::new(
            (0..5)
                .map(|i| Subquestion::new(i, format!("q{i}"), vec![]))
                .collect(),
            [(0, 1), (1, 2), (0, 3), (3, 2), (4, 2)],
        )
        .unwrap();
        let dag = build_reasoning_dag("q", plan).unwrap();
        assert_eq!(dag.levels, vec![vec![0, 4], vec![1, 3], vec![2]]);
        dag.check().unwrap();
    }

    #[test]
    fn plan_validation_rules() {
        let sq = |i: usize| Subquestion::new(i, format!("q{i}"), vec![]);
        assert!(matches!(
            ReasoningPlan::new(vec![sq(0), sq(2)], []),
            Err(Error::InvalidPlan(_))
        ));
        assert!(matches!(
            ReasoningPlan::new(vec![sq(0)], [(0, 1)]),
            Err(Error::InvalidPlan(_))
        ));
        assert!(matches!(
            ReasoningPlan::new(vec![sq(0), sq(1)], [(0, 1), (1, 0)]),
            Err(Error::Cycle(_))
        ));
        assert!(ReasoningPlan::new(vec![Subquestion::new(0, " ", vec![])], []).is_err());
        assert!(
            ReasoningPlan::new(vec![Subquestion::new(0, "x".repeat(301), vec![])], []).is_err()
        );
        assert!(ReasoningPlan::new(vec![], []).is_err());
        let shuffled = ReasoningPlan::new(vec![sq(1), sq(0)], [(0, 1)]).unwrap();
        assert_eq!(shuffled.subquestions[0].id, 0);
    }

    #[test]
    fn plan_json_shape() {
        let json = serde_json::to_value(gaap_plan()).unwrap();
        assert_eq!(json["deps"], serde_json::json!([[0, 1], [0, 2]]));
        assert_eq!(json["subquestions"][1]["topics"][1], "FINANCIAL REPORTING");
        assert!(json["subquestions"][0].get("level").is_none());
        let back: ReasoningPlan = serde_json::from_value(json).unwrap();
        assert_eq!(back, gaap_plan());
    }

    #[test]
    fn aggregators() {
        assert_eq!(Aggregator::Mean.apply([0.8, 0.2]), Some(0.5));
        assert_eq!(Aggregator::Max.apply([0.8, 0.2]), Some(0.8));
        assert_eq!(Aggregator::Sum.apply([0.8, 0.2]), Some(1.0));
        assert_eq!(Aggregator::Mean.apply([]), None);
    }

    fn closure(n: usize, deps: &BTreeSet<(usize, usize)>) -> BTreeSet<(usize, usize)> {
        let mut reach = vec![vec![false; n]; n];
        for &(a, b) in deps {
            reach[a][b] = true;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if reach[i][k] && reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
        let mut out = BTreeSet::new();
        for (i, row) in reach.iter().enumerate() {
            for (j, r) in row.iter().enumerate() {
                if *r {
                    out.insert((i, j));
                }
            }
        }
        out
    }

    fn arb_dag() -> impl Strategy<Value = (usize, BTreeSet<(usize, usize)>)> {
        (1usize..9).prop_flat_map(|n| {
            let pairs: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .collect();
            let len = pairs.len();
            (
                Just(n),
                Just(pairs),
                proptest::collection::vec(any::<bool>(), len),
            )
                .prop_map(|(n, pairs, keep)| {
                    (
                        n,
                        pairs
                            .into_iter()
                            .zip(keep)
                            .filter(|(_, k)| *k)
                            .map(|(p, _)| p)
                            .collect(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn hasse_matches_brute_force((n, deps) in arb_dag()) {
            let reduced = hasse_reduce(&deps).unwrap();
            let full = closure(n, &deps);
            let brute: BTreeSet<_> = deps
                .iter()
                .copied()
                .filter(|e| {
                    let mut without = deps.clone();
                    without.remove(e);
                    closure(n, &without) != full
                })
                .collect();
            prop_assert_eq!(&reduced, &brute);
            prop_assert_eq!(closure(n, &reduced), full);
            prop_assert_eq!(hasse_reduce(&reduced).unwrap(), reduced);
        }

        #[test]
        fn levels_respect_dependencies((n, deps) in arb_dag()) {
            let plan = ReasoningPlan::new((0..n).map(|i| Subquestion::new(i, format!("q{i}"), vec![])).collect(), deps).unwrap();
            let dag = build_reasoning_dag("q", plan).unwrap();
            dag.check().unwrap();
            prop_assert_eq!(dag.levels.iter().map(Vec::len).sum::<usize>(), n);
            prop_assert!(dag.levels.iter().all(|l| !l.is_empty()));
        }
    }
}
