//! Sequential 2-factor matching: iterative construction of a sparse symmetric
//! edge set over embedding similarity.
//!
//! Each iteration adds one layer of edges in which every node has degree at
//! most 2 (the exact solver guarantees exactly 2), previously committed edges
//! are never reused, and total similarity is maximized (exact mode) or
//! greedily approximated (production mode). Layers accumulate into a strictly
//! growing cumulative edge set.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::corpus::{Corpus, Role};

/// Enumeration bound for the exact solver.
pub const EXACT_NODE_BOUND: usize = 10;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("Infeasible: node {node} cannot reach the required degree in this layer")]
    Infeasible { node: String },
    #[error("EmptyCandidateSet: no unused candidate edges remain")]
    EmptyCandidateSet,
    #[error("OverlapError: edge {0} is already committed")]
    OverlapError(Edge),
    #[error("TooLarge: exact solver supports at most {bound} nodes, got {n}")]
    TooLarge { n: usize, bound: usize },
    #[error("SizeMismatch: {0}")]
    SizeMismatch(String),
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
}

/// Undirected edge stored with endpoints ordered `u < v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    u: usize,
    v: usize,
}

impl Edge {
    pub fn new(a: usize, b: usize) -> Self {
        assert_ne!(a, b, "self-loops are not representable");
        Self {
            u: a.min(b),
            v: a.max(b),
        }
    }

    pub fn endpoints(&self) -> (usize, usize) {
        (self.u, self.v)
    }
}

impl std::fmt::Display for Edge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.u, self.v)
    }
}

/// Symmetric dense weight matrix.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    n: usize,
    w: Vec<f64>,
}

impl WeightMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            w: vec![0.0; n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for u in 0..n {
            for v in (u + 1)..n {
                let x = f(u, v);
                m.set(u, v, x);
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.w[u * self.n + v]
    }

    pub fn set(&mut self, u: usize, v: usize, x: f64) {
        self.w[u * self.n + v] = x;
        self.w[v * self.n + u] = x;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMode {
    /// Enumeration of all 2-factors; the test oracle. Bounded by
    /// [`EXACT_NODE_BOUND`] nodes.
    Exact,
    /// Weight-descending admission plus a repair pass; the production path.
    Greedy,
}

/// Which edge families enter the candidate universe. Historical-historical
/// edges are never candidates.
#[derive(Debug, Clone, Copy)]
pub struct EdgePolicy {
    /// submission-submission edges
    pub synchronic: bool,
    /// submission-historical edges
    pub diachronic: bool,
    pub mode: SolverMode,
}

impl Default for EdgePolicy {
    fn default() -> Self {
        Self {
            synchronic: true,
            diachronic: true,
            mode: SolverMode::Greedy,
        }
    }
}

/// One committed iteration of matching.
#[derive(Debug, Clone)]
pub struct EdgeLayer {
    pub iteration: usize,
    /// Edges with their weights, sorted by edge.
    pub edges: Vec<(Edge, f64)>,
    /// Required nodes the greedy repair left below degree 2.
    pub relaxed_nodes: Vec<usize>,
}

impl EdgeLayer {
    pub fn edge_set(&self) -> BTreeSet<Edge> {
        self.edges.iter().map(|(e, _)| *e).collect()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges
            .iter()
            .filter(|(e, _)| e.u == node || e.v == node)
            .count()
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|(_, w)| w).sum()
    }

    pub fn contains(&self, edge: Edge) -> bool {
        self.edges.binary_search_by(|(e, _)| e.cmp(&edge)).is_ok()
    }
}

/// Cumulative matching state across iterations.
#[derive(Debug, Clone, Default)]
pub struct MatchState {
    num_nodes: usize,
    layers: Vec<EdgeLayer>,
    cumulative: BTreeSet<Edge>,
}

impl MatchState {
    pub fn new(num_nodes: usize) -> Self {
        Self {
            num_nodes,
            layers: Vec::new(),
            cumulative: BTreeSet::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn layers(&self) -> &[EdgeLayer] {
        &self.layers
    }

    pub fn cumulative(&self) -> &BTreeSet<Edge> {
        &self.cumulative
    }

    pub fn degree(&self, node: usize) -> usize {
        self.cumulative
            .iter()
            .filter(|e| e.u == node || e.v == node)
            .count()
    }

    /// Append a layer. The layer must be disjoint from every committed edge.
    pub fn commit_layer(&self, layer: EdgeLayer) -> Result<MatchState, GraphError> {
        for (e, _) in &layer.edges {
            if e.v >= self.num_nodes {
                return Err(GraphError::SizeMismatch(format!(
                    "edge {e} out of range for {} nodes",
                    self.num_nodes
                )));
            }
            if self.cumulative.contains(e) {
                return Err(GraphError::OverlapError(*e));
            }
        }
        let mut next = self.clone();
        next.cumulative.extend(layer.edges.iter().map(|(e, _)| *e));
        next.layers.push(layer);
        Ok(next)
    }

    /// Serialize as `iteration,u_id,v_id,weight` lines in deterministic order.
    pub fn write_edge_list<W: Write>(&self, ids: &[String], mut w: W) -> Result<(), GraphError> {
        for layer in &self.layers {
            for (e, weight) in &layer.edges {
                writeln!(
                    w,
                    "{},{},{},{}",
                    layer.iteration, ids[e.u], ids[e.v], weight
                )?;
            }
        }
        Ok(())
    }

    /// Rebuild a state from [`write_edge_list`] output.
    pub fn read_edge_list<R: BufRead>(
        reader: R,
        index_of: impl Fn(&str) -> Option<usize>,
        num_nodes: usize,
    ) -> Result<MatchState, GraphError> {
        let mut layers: Vec<EdgeLayer> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.splitn(4, ',').collect();
            let bad = |msg: &str| {
                GraphError::SizeMismatch(format!("edge list line {}: {msg}", lineno + 1))
            };
            if parts.len() != 4 {
                return Err(bad("expected iteration,u_id,v_id,weight"));
            }
            let iteration: usize = parts[0].parse().map_err(|_| bad("bad iteration"))?;
            let u = index_of(parts[1]).ok_or_else(|| bad("unknown u_id"))?;
            let v = index_of(parts[2]).ok_or_else(|| bad("unknown v_id"))?;
            let weight: f64 = parts[3].parse().map_err(|_| bad("bad weight"))?;
            if layers.last().map(|l| l.iteration) != Some(iteration) {
                layers.push(EdgeLayer {
                    iteration,
                    edges: Vec::new(),
                    relaxed_nodes: Vec::new(),
                });
            }
            layers
                .last_mut()
                .unwrap()
                .edges
                .push((Edge::new(u, v), weight));
        }
        let mut state = MatchState::new(num_nodes);
        for mut layer in layers {
            layer.edges.sort_by_key(|a| a.0);
            state = state.commit_layer(layer)?;
        }
        Ok(state)
    }
}

/// A weighted candidate universe plus the set of nodes that must be matched.
#[derive(Debug, Clone)]
pub struct CandidateGraph {
    n: usize,
    weights: WeightMatrix,
    allowed: Vec<bool>,
    /// Nodes the greedy repair pass must bring to degree >= 1.
    required: Vec<bool>,
}

impl CandidateGraph {
    /// Complete graph: every edge allowed, every node required.
    pub fn complete(weights: WeightMatrix) -> Self {
        let n = weights.n();
        Self {
            n,
            weights,
            allowed: vec![true; n * n],
            required: vec![true; n],
        }
    }

    /// Candidate universe from corpus roles and embeddings under a policy.
    /// Nodes without embeddings take part in no candidate edge.
    pub fn from_corpus(corpus: &Corpus, policy: &EdgePolicy) -> Self {
        let n = corpus.len();
        let mut allowed = vec![false; n * n];
        let mut weights = WeightMatrix::zeros(n);
        for u in 0..n {
            let eu = match corpus.embedding(u) {
                Some(e) => e,
                None => continue,
            };
            for v in (u + 1)..n {
                let ev = match corpus.embedding(v) {
                    Some(e) => e,
                    None => continue,
                };
                let ok = match (corpus.paper(u).role, corpus.paper(v).role) {
                    (Role::Submission, Role::Submission) => policy.synchronic,
                    (Role::Historical, Role::Historical) => false,
                    _ => policy.diachronic,
                };
                if ok {
                    allowed[u * n + v] = true;
                    allowed[v * n + u] = true;
                    let dot: f64 = eu.vector.iter().zip(&ev.vector).map(|(a, b)| a * b).sum();
                    weights.set(u, v, dot.clamp(-1.0, 1.0));
                }
            }
        }
        let required = (0..n).map(|i| corpus.is_submission(i)).collect();
        Self {
            n,
            weights,
            allowed,
            required,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn is_allowed(&self, u: usize, v: usize) -> bool {
        self.allowed[u * self.n + v]
    }

    fn eligible(&self) -> Vec<bool> {
        (0..self.n)
            .map(|u| (0..self.n).any(|v| v != u && self.is_allowed(u, v)))
            .collect()
    }

    /// Solve one layer against the forbidden (already committed) edge set.
    pub fn solve_layer(
        &self,
        forbidden: &BTreeSet<Edge>,
        mode: SolverMode,
        iteration: usize,
    ) -> Result<EdgeLayer, GraphError> {
        match mode {
            SolverMode::Exact => self.solve_exact(forbidden, iteration),
            SolverMode::Greedy => self.solve_greedy(forbidden, iteration),
        }
    }

    fn solve_exact(
        &self,
        forbidden: &BTreeSet<Edge>,
        iteration: usize,
    ) -> Result<EdgeLayer, GraphError> {
        if self.n > EXACT_NODE_BOUND {
            return Err(GraphError::TooLarge {
                n: self.n,
                bound: EXACT_NODE_BOUND,
            });
        }
        let eligible = self.eligible();
        if !eligible.iter().any(|&e| e) {
            return Err(GraphError::EmptyCandidateSet);
        }
        let available =
            |u: usize, v: usize| self.is_allowed(u, v) && !forbidden.contains(&Edge::new(u, v));
        if !(0..self.n).any(|u| ((u + 1)..self.n).any(|v| available(u, v))) {
            return Err(GraphError::EmptyCandidateSet);
        }
        // quick infeasibility: an eligible node with fewer than 2 available edges
        for (u, _) in eligible.iter().enumerate().filter(|(_, &e)| e) {
            let avail = (0..self.n).filter(|&v| v != u && available(u, v)).count();
            if avail < 2 {
                return Err(GraphError::Infeasible {
                    node: u.to_string(),
                });
            }
        }
        let mut search = ExactSearch {
            n: self.n,
            weights: &self.weights,
            eligible: &eligible,
            available: &available,
            deg: vec![0u8; self.n],
            partner_above: vec![usize::MAX; self.n],
            chosen: Vec::new(),
            best: None,
        };
        search.run(0.0);
        match search.best {
            Some((_, edges)) => {
                let mut out: Vec<(Edge, f64)> = edges
                    .into_iter()
                    .map(|e| (e, self.weights.get(e.u, e.v)))
                    .collect();
                out.sort_by_key(|a| a.0);
                Ok(EdgeLayer {
                    iteration,
                    edges: out,
                    relaxed_nodes: Vec::new(),
                })
            }
            None => {
                // no complete assignment exists; report the first eligible node
                let node = (0..self.n).find(|&u| eligible[u]).unwrap_or(0);
                Err(GraphError::Infeasible {
                    node: node.to_string(),
                })
            }
        }
    }

    fn solve_greedy(
        &self,
        forbidden: &BTreeSet<Edge>,
        iteration: usize,
    ) -> Result<EdgeLayer, GraphError> {
        let n = self.n;
        let mut candidates: Vec<(Edge, f64)> = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if self.is_allowed(u, v) {
                    let e = Edge::new(u, v);
                    if !forbidden.contains(&e) {
                        candidates.push((e, self.weights.get(u, v)));
                    }
                }
            }
        }
        if candidates.is_empty() {
            return Err(GraphError::EmptyCandidateSet);
        }
        candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

        let mut deg = vec![0usize; n];
        let mut chosen: BTreeSet<Edge> = BTreeSet::new();
        for (e, _) in &candidates {
            if deg[e.u] < 2 && deg[e.v] < 2 {
                chosen.insert(*e);
                deg[e.u] += 1;
                deg[e.v] += 1;
            }
        }

        // Repair: every required eligible node must reach degree >= 1. A node
        // left at zero takes its best spare-capacity partner when one exists;
        // otherwise an alternating add/drop path redistributes slots until it
        // ends at a node that can absorb the drop.
        let eligible = self.eligible();
        let zeros: Vec<usize> = (0..n)
            .filter(|&u| self.required[u] && eligible[u] && deg[u] == 0)
            .collect();
        for u in zeros {
            if deg[u] > 0 {
                continue;
            }
            if !self.augment(u, forbidden, &eligible, &mut chosen, &mut deg) {
                return Err(GraphError::Infeasible {
                    node: u.to_string(),
                });
            }
        }

        if chosen.is_empty() {
            return Err(GraphError::EmptyCandidateSet);
        }
        let relaxed_nodes: Vec<usize> = (0..n)
            .filter(|&u| self.required[u] && eligible[u] && deg[u] < 2)
            .collect();
        let edges: Vec<(Edge, f64)> = chosen
            .into_iter()
            .map(|e| (e, self.weights.get(e.u, e.v)))
            .collect();
        Ok(EdgeLayer {
            iteration,
            edges,
            relaxed_nodes,
        })
    }

    /// Give `start` one layer edge by an alternating add/drop path that never
    /// pushes a required node below degree 1 or any node above 2. BFS from
    /// `start`: an unused candidate edge is added, and when its endpoint is
    /// saturated one of that endpoint's layer edges is dropped, continuing
    /// from the dropped edge's far node until the drop is absorbable. Returns
    /// false when no such path exists.
    fn augment(
        &self,
        start: usize,
        forbidden: &BTreeSet<Edge>,
        eligible: &[bool],
        chosen: &mut BTreeSet<Edge>,
        deg: &mut [usize],
    ) -> bool {
        let n = self.n;
        let free = |x: usize, y: usize, chosen: &BTreeSet<Edge>| {
            x != y
                && self.is_allowed(x, y)
                && !forbidden.contains(&Edge::new(x, y))
                && !chosen.contains(&Edge::new(x, y))
        };
        // parent[v] = (needy node we came from, edge dropped at v), for path
        // reconstruction
        let mut parent: Vec<Option<(usize, Option<Edge>)>> = vec![None; n];
        let mut visited = vec![false; n];
        visited[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(cur) = queue.pop_front() {
            // heavier partners first, deterministic on ties
            let mut partners: Vec<usize> = (0..n).filter(|&v| free(cur, v, chosen)).collect();
            partners.sort_by(|&a, &b| {
                self.weights
                    .get(cur, b)
                    .partial_cmp(&self.weights.get(cur, a))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            for v in partners {
                if deg[v] < 2 {
                    // terminal: v has spare capacity
                    self.apply_path(&parent, cur, v, None, chosen, deg);
                    return true;
                }
                if visited[v] {
                    continue;
                }
                visited[v] = true;
                let v_edges: Vec<Edge> = chosen
                    .iter()
                    .filter(|e| e.u == v || e.v == v)
                    .copied()
                    .collect();
                for drop in v_edges {
                    let far = if drop.u == v { drop.v } else { drop.u };
                    let absorbable = deg[far] >= 2 || !(self.required[far] && eligible[far]);
                    if absorbable {
                        // terminal: dropping leaves far at a legal degree
                        self.apply_path(&parent, cur, v, Some(drop), chosen, deg);
                        return true;
                    }
                    if !visited[far] {
                        visited[far] = true;
                        parent[far] = Some((cur, Some(drop)));
                        queue.push_back(far);
                    }
                }
            }
        }
        false
    }

    /// Apply the alternating path ending with edge (cur, v) and an optional
    /// drop at v, walking parent pointers back to the start.
    fn apply_path(
        &self,
        parent: &[Option<(usize, Option<Edge>)>],
        mut cur: usize,
        v: usize,
        terminal_drop: Option<Edge>,
        chosen: &mut BTreeSet<Edge>,
        deg: &mut [usize],
    ) {
        if let Some(drop) = terminal_drop {
            chosen.remove(&drop);
            deg[drop.u] -= 1;
            deg[drop.v] -= 1;
        }
        chosen.insert(Edge::new(cur, v));
        deg[cur] += 1;
        deg[v] += 1;
        while let Some((prev, dropped)) = parent[cur] {
            if let Some(drop) = dropped {
                chosen.remove(&drop);
                deg[drop.u] -= 1;
                deg[drop.v] -= 1;
                let mid = if drop.u == cur { drop.v } else { drop.u };
                chosen.insert(Edge::new(prev, mid));
                deg[prev] += 1;
                deg[mid] += 1;
            }
            cur = prev;
        }
    }
}

struct ExactSearch<'a, F: Fn(usize, usize) -> bool> {
    n: usize,
    weights: &'a WeightMatrix,
    eligible: &'a [bool],
    available: &'a F,
    deg: Vec<u8>,
    /// For canonical enumeration: the partner > u most recently assigned to u.
    partner_above: Vec<usize>,
    chosen: Vec<Edge>,
    best: Option<(f64, Vec<Edge>)>,
}

impl<F: Fn(usize, usize) -> bool> ExactSearch<'_, F> {
    fn run(&mut self, weight: f64) {
        let pivot = (0..self.n).find(|&u| self.eligible[u] && self.deg[u] < 2);
        let Some(u) = pivot else {
            let better = match &self.best {
                None => true,
                Some((bw, be)) => weight > *bw || (weight == *bw && self.chosen < *be),
            };
            if better {
                self.best = Some((weight, self.chosen.clone()));
            }
            return;
        };
        let lb = if self.partner_above[u] == usize::MAX {
            u
        } else {
            self.partner_above[u]
        };
        for v in (lb + 1)..self.n {
            if !self.eligible[v] || self.deg[v] >= 2 || !(self.available)(u, v) {
                continue;
            }
            let saved = self.partner_above[u];
            self.deg[u] += 1;
            self.deg[v] += 1;
            self.partner_above[u] = v;
            self.chosen.push(Edge::new(u, v));
            self.run(weight + self.weights.get(u, v));
            self.chosen.pop();
            self.partner_above[u] = saved;
            self.deg[u] -= 1;
            self.deg[v] -= 1;
        }
    }
}

/// One matching step over the corpus candidate universe defined by `policy`.
/// The state is not modified; commit the returned layer explicitly.
pub fn s2fm_step(
    state: &MatchState,
    corpus: &Corpus,
    policy: &EdgePolicy,
) -> Result<EdgeLayer, GraphError> {
    if state.num_nodes() != corpus.len() {
        return Err(GraphError::SizeMismatch(format!(
            "state has {} nodes, corpus has {}",
            state.num_nodes(),
            corpus.len()
        )));
    }
    let graph = CandidateGraph::from_corpus(corpus, policy);
    graph.solve_layer(state.cumulative(), policy.mode, state.layers().len() + 1)
}

/// Globally optimal 2-factor over the complete graph minus `forbidden`,
/// by enumeration. Ties break toward the lexicographically smaller edge list.
pub fn brute_force_two_factor(
    weights: &WeightMatrix,
    forbidden: &BTreeSet<Edge>,
) -> Result<EdgeLayer, GraphError> {
    let graph = CandidateGraph::complete(weights.clone());
    match graph.solve_exact(forbidden, 1) {
        // a fully forbidden universe is an infeasible instance, not an empty one
        Err(GraphError::EmptyCandidateSet) => Err(GraphError::Infeasible { node: "0".into() }),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k4_weights() -> WeightMatrix {
        let mut w = WeightMatrix::zeros(4);
        w.set(0, 1, 0.9);
        w.set(2, 3, 0.8);
        w.set(0, 2, 0.5);
        w.set(1, 3, 0.4);
        w.set(0, 3, 0.1);
        w.set(1, 2, 0.2);
        w
    }

    /// K4 has exactly three 2-factors, all Hamiltonian cycles. Enumerate them
    /// directly as a reference independent of the search code.
    fn k4_best_by_hand(w: &WeightMatrix) -> (f64, Vec<Edge>) {
        let cycles: [[(usize, usize); 4]; 3] = [
            [(0, 1), (1, 2), (2, 3), (3, 0)],
            [(0, 1), (1, 3), (3, 2), (2, 0)],
            [(0, 2), (2, 1), (1, 3), (3, 0)],
        ];
        let mut best: Option<(f64, Vec<Edge>)> = None;
        for cycle in cycles {
            let weight: f64 = cycle.iter().map(|&(a, b)| w.get(a, b)).sum();
            let mut edges: Vec<Edge> = cycle.iter().map(|&(a, b)| Edge::new(a, b)).collect();
            edges.sort();
            if best.as_ref().is_none_or(|(bw, _)| weight > *bw) {
                best = Some((weight, edges));
            }
        }
        best.unwrap()
    }

    #[test]
    fn k4_exact_layer_is_the_best_hamiltonian_cycle() {
        let w = k4_weights();
        let (want_weight, want_edges) = k4_best_by_hand(&w);
        let layer = brute_force_two_factor(&w, &BTreeSet::new()).unwrap();
        assert!((layer.total_weight() - want_weight).abs() < 1e-12);
        let got: Vec<Edge> = layer.edges.iter().map(|(e, _)| *e).collect();
        assert_eq!(got, want_edges);
        // the specific optimum: cycle 0-1-3-2-0 with weight 2.6
        assert!((layer.total_weight() - 2.6).abs() < 1e-12);
        assert!(layer.contains(Edge::new(0, 1)));
        assert!(layer.contains(Edge::new(1, 3)));
        assert!(layer.contains(Edge::new(3, 2)));
        assert!(layer.contains(Edge::new(2, 0)));
    }

    #[test]
    fn k3_only_two_factor_is_the_triangle() {
        let mut w = WeightMatrix::zeros(3);
        w.set(0, 1, 0.3);
        w.set(1, 2, 0.2);
        w.set(0, 2, 0.7);
        let layer = brute_force_two_factor(&w, &BTreeSet::new()).unwrap();
        assert_eq!(layer.edges.len(), 3);
        assert!((layer.total_weight() - 1.2).abs() < 1e-12);
        let greedy = CandidateGraph::complete(w)
            .solve_layer(&BTreeSet::new(), SolverMode::Greedy, 1)
            .unwrap();
        assert_eq!(greedy.edge_set(), layer.edge_set());
    }

    #[test]
    fn k3_unit_weights_total_three() {
        let w = WeightMatrix::from_fn(3, |_, _| 1.0);
        let layer = brute_force_two_factor(&w, &BTreeSet::new()).unwrap();
        assert!((layer.total_weight() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn second_iteration_is_disjoint_from_first() {
        // K4 is 3-regular, so no second full 2-factor exists after the first:
        // exact mode must report infeasibility while greedy relaxes to the
        // two remaining edges, disjoint from layer 1.
        let w = k4_weights();
        let graph = CandidateGraph::complete(w.clone());
        let first = graph
            .solve_layer(&BTreeSet::new(), SolverMode::Exact, 1)
            .unwrap();
        let state = MatchState::new(4).commit_layer(first.clone()).unwrap();
        assert!(matches!(
            graph.solve_layer(state.cumulative(), SolverMode::Exact, 2),
            Err(GraphError::Infeasible { .. })
        ));
        let second = graph
            .solve_layer(state.cumulative(), SolverMode::Greedy, 2)
            .unwrap();
        assert!(first.edge_set().is_disjoint(&second.edge_set()));
        // layer 1 = {01,13,23,02}; the two leftover edges of K4
        let want: BTreeSet<Edge> = [Edge::new(0, 3), Edge::new(1, 2)].into();
        assert_eq!(second.edge_set(), want);
    }

    #[test]
    fn second_exact_iteration_on_k5() {
        // K5 is 4-regular and decomposes into two Hamiltonian cycles, so the
        // second exact layer exists and matches enumeration over the
        // remaining edges.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = WeightMatrix::from_fn(5, |_, _| rng.random::<f64>());
        let graph = CandidateGraph::complete(w.clone());
        let first = graph
            .solve_layer(&BTreeSet::new(), SolverMode::Exact, 1)
            .unwrap();
        let state = MatchState::new(5).commit_layer(first.clone()).unwrap();
        let second = graph
            .solve_layer(state.cumulative(), SolverMode::Exact, 2)
            .unwrap();
        assert!(first.edge_set().is_disjoint(&second.edge_set()));
        let want = brute_force_two_factor(&w, state.cumulative()).unwrap();
        assert_eq!(second.edge_set(), want.edge_set());
    }

    #[test]
    fn all_edges_forbidden_is_infeasible() {
        let w = k4_weights();
        let mut forbidden = BTreeSet::new();
        for u in 0..4 {
            for v in (u + 1)..4 {
                forbidden.insert(Edge::new(u, v));
            }
        }
        assert!(matches!(
            brute_force_two_factor(&w, &forbidden),
            Err(GraphError::Infeasible { .. })
        ));
    }

    #[test]
    fn exact_bound_enforced() {
        let w = WeightMatrix::from_fn(11, |_, _| 1.0);
        assert!(matches!(
            brute_force_two_factor(&w, &BTreeSet::new()),
            Err(GraphError::TooLarge { .. })
        ));
    }

    #[test]
    fn commit_same_layer_twice_overlaps() {
        let w = WeightMatrix::from_fn(3, |_, _| 1.0);
        let layer = brute_force_two_factor(&w, &BTreeSet::new()).unwrap();
        let state = MatchState::new(3).commit_layer(layer.clone()).unwrap();
        assert_eq!(state.degree(0), 2);
        assert_eq!(state.degree(1), 2);
        assert_eq!(state.degree(2), 2);
        assert!(matches!(
            state.commit_layer(layer),
            Err(GraphError::OverlapError(_))
        ));
    }

    #[test]
    fn two_disjoint_layers_on_k5_reach_degree_four() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = WeightMatrix::from_fn(5, |_, _| rng.random::<f64>());
        let first = brute_force_two_factor(&w, &BTreeSet::new()).unwrap();
        let state = MatchState::new(5).commit_layer(first).unwrap();
        let second = brute_force_two_factor(&w, state.cumulative()).unwrap();
        let state = state.commit_layer(second).unwrap();
        for node in 0..5 {
            assert_eq!(state.degree(node), 4);
        }
    }

    #[test]
    fn greedy_repair_rescues_crowded_out_node() {
        // weights that make plain admission saturate a triangle and leave
        // node 3 isolated; repair must steal a slot
        let mut w = WeightMatrix::zeros(4);
        w.set(0, 1, 0.9);
        w.set(0, 2, 0.8);
        w.set(1, 2, 0.7);
        w.set(0, 3, 0.1);
        w.set(1, 3, 0.05);
        w.set(2, 3, 0.02);
        let layer = CandidateGraph::complete(w)
            .solve_layer(&BTreeSet::new(), SolverMode::Greedy, 1)
            .unwrap();
        assert!(
            layer.degree(3) >= 1,
            "repair must connect node 3: {layer:?}"
        );
        for node in 0..4 {
            assert!(layer.degree(node) <= 2);
        }
    }

    #[test]
    fn diachronic_only_tight_capacity_resolves_every_layer() {
        // 20 submissions against 10 historicals: the per-layer slot supply
        // (10 x 2) exactly matches demand, so plain admission leaves some
        // submissions at zero and the repair must redistribute through
        // alternating paths
        use crate::corpus::{Corpus, Embedding, Paper, Role};
        use std::collections::HashMap;
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
            let mut papers = Vec::new();
            let mut embeddings = Vec::new();
            for i in 0..30 {
                let role = if i < 20 {
                    Role::Submission
                } else {
                    Role::Historical
                };
                let id = format!("p{i:03}");
                papers.push(Paper {
                    id: id.clone(),
                    role,
                    venue: "v".into(),
                    year: 2025,
                    text: format!("b{i}"),
                });
                embeddings.push(Embedding {
                    paper_id: id,
                    vector: (0..8).map(|_| rng.random::<f64>() - 0.5).collect(),
                });
            }
            let corpus = Corpus::from_parts(papers, embeddings, HashMap::new()).unwrap();
            let policy = EdgePolicy {
                synchronic: false,
                diachronic: true,
                mode: SolverMode::Greedy,
            };
            let graph = CandidateGraph::from_corpus(&corpus, &policy);
            let mut state = MatchState::new(corpus.len());
            for t in 1..=3 {
                let layer = graph
                    .solve_layer(state.cumulative(), SolverMode::Greedy, t)
                    .unwrap_or_else(|e| panic!("seed {seed} layer {t}: {e}"));
                for s in 0..20 {
                    assert!(layer.degree(s) >= 1, "seed {seed} layer {t} sub {s}");
                }
                for h in 20..30 {
                    assert!(layer.degree(h) <= 2);
                }
                state = state.commit_layer(layer).unwrap();
            }
        }
    }

    #[test]
    fn permutation_equivariance_with_unique_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..20 {
            let n = 5 + (trial % 3);
            // distinct weights force a unique optimum
            let mut next = 0.0;
            let w = WeightMatrix::from_fn(n, |_, _| {
                next += 0.013;
                next + rng.random::<f64>() * 0.001
            });
            let base = brute_force_two_factor(&w, &BTreeSet::new()).unwrap();

            let mut perm: Vec<usize> = (0..n).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);
            let pw = WeightMatrix::from_fn(n, |u, v| w.get(perm[u], perm[v]));
            let mapped = brute_force_two_factor(&pw, &BTreeSet::new()).unwrap();

            // the permuted solve must be the preimage of the base layer
            let mut want: Vec<Edge> = base
                .edges
                .iter()
                .map(|(e, _)| {
                    let inv_u = perm.iter().position(|&p| p == e.u).unwrap();
                    let inv_v = perm.iter().position(|&p| p == e.v).unwrap();
                    Edge::new(inv_u, inv_v)
                })
                .collect();
            want.sort();
            let got: Vec<Edge> = mapped.edges.iter().map(|(e, _)| *e).collect();
            assert_eq!(got, want, "trial {trial}");
        }
    }

    #[test]
    fn edge_list_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = WeightMatrix::from_fn(5, |_, _| rng.random::<f64>());
        let graph = CandidateGraph::complete(w);
        let l1 = graph
            .solve_layer(&BTreeSet::new(), SolverMode::Exact, 1)
            .unwrap();
        let state = MatchState::new(5).commit_layer(l1).unwrap();
        let l2 = graph
            .solve_layer(state.cumulative(), SolverMode::Exact, 2)
            .unwrap();
        let state = state.commit_layer(l2).unwrap();

        let ids: Vec<String> = (0..5).map(|i| format!("p{i}")).collect();
        let mut buf = Vec::new();
        state.write_edge_list(&ids, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 10);

        let reload = MatchState::read_edge_list(
            std::io::BufReader::new(&buf[..]),
            |id| ids.iter().position(|x| x == id),
            5,
        )
        .unwrap();
        assert_eq!(reload.cumulative(), state.cumulative());
        assert_eq!(reload.layers().len(), 2);
    }

    proptest! {
        // Existence: every complete candidate graph with N >= 3 admits a
        // 2-factor, so both solver modes succeed on the first layer.
        #[test]
        fn first_layer_always_exists_on_complete_graphs(
            n in 3usize..=10,
            seed in 0u64..500,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = WeightMatrix::from_fn(n, |_, _| rng.random::<f64>());
            let exact = brute_force_two_factor(&w, &BTreeSet::new()).unwrap();
            for node in 0..n {
                prop_assert_eq!(exact.degree(node), 2);
            }
            let greedy = CandidateGraph::complete(w)
                .solve_layer(&BTreeSet::new(), SolverMode::Greedy, 1)
                .unwrap();
            for node in 0..n {
                let d = greedy.degree(node);
                prop_assert!((1..=2).contains(&d));
            }
        }

        // Subset inclusion is strict across commits.
        #[test]
        fn commits_grow_strictly(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 6 + (seed % 3) as usize;
            let w = WeightMatrix::from_fn(n, |_, _| rng.random::<f64>());
            let graph = CandidateGraph::complete(w);
            let mut state = MatchState::new(n);
            for t in 1..=2 {
                let prev = state.cumulative().clone();
                let layer = graph.solve_layer(&prev, SolverMode::Greedy, t).unwrap();
                state = state.commit_layer(layer).unwrap();
                prop_assert!(prev.is_subset(state.cumulative()));
                prop_assert!(prev.len() < state.cumulative().len());
            }
        }
    }
}
