//! Black-box linear-objective solvers `argmin_{x in X(p)} <y, x>` over a
//! graph: Dijkstra for shortest paths, Held-Karp for exact tours, nearest
//! neighbor + 2-opt for larger tours, plus exhaustive-enumeration oracles.
//!
//! All solvers are pure functions of `(graph, costs, requirement)` with
//! deterministic tie-breaking, so repeated calls are bit-identical.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Requirement, SolutionVector};

/// Node limit for the exact Held-Karp tour solver.
pub const EXACT_TSP_NODE_LIMIT: usize = 16;
/// Node limits for the enumeration oracles.
pub const BRUTE_SPP_NODE_LIMIT: usize = 10;
pub const BRUTE_TSP_NODE_LIMIT: usize = 8;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum SolverError {
    #[error("target unreachable from source")]
    NoPathExists,
    #[error("graph admits no Hamiltonian cycle")]
    NoCycleExists,
    #[error("exact tour solver limited to {limit} nodes, graph has {nodes}")]
    GraphTooLargeForExact { nodes: usize, limit: usize },
    #[error("brute force limited to {limit} nodes, graph has {nodes}")]
    GraphTooLargeForBruteForce { nodes: usize, limit: usize },
    #[error("requirement does not match solver kind: {0}")]
    RequirementMismatch(String),
    #[error("cost vector length {got} does not match edge count {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("cost entry {0} is not finite")]
    NonFiniteCost(usize),
    #[error("shortest-path costs must be nonnegative, edge {0} is negative")]
    NegativeCost(usize),
    #[error("tour solvers require an undirected graph")]
    UndirectedRequired,
    #[error("tour heuristic requires a complete graph")]
    IncompleteGraph,
    #[error("perturbation scale must be nonnegative, got {0}")]
    NegativeSigma(f64),
}

/// Objective coefficients per edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostVector {
    costs: Vec<f64>,
}

impl CostVector {
    pub fn new(costs: Vec<f64>) -> Result<Self, SolverError> {
        if let Some(i) = costs.iter().position(|c| !c.is_finite()) {
            return Err(SolverError::NonFiniteCost(i));
        }
        Ok(Self { costs })
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.costs
    }

    pub fn mean(&self) -> f64 {
        if self.costs.is_empty() {
            0.0
        } else {
            self.costs.iter().sum::<f64>() / self.costs.len() as f64
        }
    }
}

/// Which solver realizes the argmin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Spp,
    TspExact,
    TspHeuristic,
}

/// Solve the problem exactly (Spp, TspExact) or to a 2-opt local optimum
/// (TspHeuristic). The returned solution is always feasible.
pub fn solve(
    kind: SolverKind,
    g: &Graph,
    y: &CostVector,
    p: &Requirement,
) -> Result<SolutionVector, SolverError> {
    check_costs(g, y)?;
    match kind {
        SolverKind::Spp => {
            let (s, t) = source_target(g, p)?;
            if let Some(i) = y.as_slice().iter().position(|&c| c < 0.0) {
                return Err(SolverError::NegativeCost(i));
            }
            let edges = dijkstra(g, y.as_slice(), s, t).ok_or(SolverError::NoPathExists)?;
            Ok(SolutionVector::from_edge_ids(g.edge_count(), &edges).expect("solver edges"))
        }
        SolverKind::TspExact => {
            require_tour(g, p)?;
            if g.node_count() > EXACT_TSP_NODE_LIMIT {
                return Err(SolverError::GraphTooLargeForExact {
                    nodes: g.node_count(),
                    limit: EXACT_TSP_NODE_LIMIT,
                });
            }
            let edges = held_karp(g, y.as_slice())?;
            Ok(SolutionVector::from_edge_ids(g.edge_count(), &edges).expect("solver edges"))
        }
        SolverKind::TspHeuristic => {
            require_tour(g, p)?;
            let edges = nearest_neighbor_two_opt(g, y.as_slice())?;
            Ok(SolutionVector::from_edge_ids(g.edge_count(), &edges).expect("solver edges"))
        }
    }
}

/// Result of a perturbed solver call.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedSolve {
    pub solution: SolutionVector,
    /// The drawn Gaussian perturbation, before any clamping.
    pub eps: Vec<f64>,
    /// How many perturbed entries were lifted to the clamp floor (Spp only).
    pub clamp_count: usize,
}

/// Solve on `y + eps` with `eps ~ N(0, sigma_eps^2)` i.i.d. per edge.
///
/// Shortest-path costs are clamped below at `clamp_floor` so Dijkstra stays
/// valid; clamp events are counted. `sigma_eps = 0` reduces to [`solve`].
pub fn solve_perturbed<R: Rng + ?Sized>(
    kind: SolverKind,
    g: &Graph,
    y: &CostVector,
    p: &Requirement,
    sigma_eps: f64,
    clamp_floor: f64,
    rng: &mut R,
) -> Result<PerturbedSolve, SolverError> {
    if sigma_eps < 0.0 || !sigma_eps.is_finite() {
        return Err(SolverError::NegativeSigma(sigma_eps));
    }
    check_costs(g, y)?;
    let eps: Vec<f64> = (0..y.len())
        .map(|_| sigma_eps * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut clamp_count = 0usize;
    let perturbed: Vec<f64> = match kind {
        SolverKind::Spp => y
            .as_slice()
            .iter()
            .zip(&eps)
            .map(|(&c, &e)| {
                let v = c + e;
                if v < clamp_floor {
                    clamp_count += 1;
                    clamp_floor
                } else {
                    v
                }
            })
            .collect(),
        _ => y.as_slice().iter().zip(&eps).map(|(&c, &e)| c + e).collect(),
    };
    let solution = solve(kind, g, &CostVector { costs: perturbed }, p)?;
    Ok(PerturbedSolve { solution, eps, clamp_count })
}

/// Exhaustive-enumeration optimum for small instances; ties broken by the
/// lexicographically smallest sorted edge-id set.
pub fn brute_force(
    kind: SolverKind,
    g: &Graph,
    y: &CostVector,
    p: &Requirement,
) -> Result<SolutionVector, SolverError> {
    check_costs(g, y)?;
    match kind {
        SolverKind::Spp => {
            if g.node_count() > BRUTE_SPP_NODE_LIMIT {
                return Err(SolverError::GraphTooLargeForBruteForce {
                    nodes: g.node_count(),
                    limit: BRUTE_SPP_NODE_LIMIT,
                });
            }
            let (s, t) = source_target(g, p)?;
            brute_force_spp(g, y.as_slice(), s, t)
        }
        SolverKind::TspExact | SolverKind::TspHeuristic => {
            require_tour(g, p)?;
            if g.node_count() > BRUTE_TSP_NODE_LIMIT {
                return Err(SolverError::GraphTooLargeForBruteForce {
                    nodes: g.node_count(),
                    limit: BRUTE_TSP_NODE_LIMIT,
                });
            }
            brute_force_tsp(g, y.as_slice())
        }
    }
}

fn check_costs(g: &Graph, y: &CostVector) -> Result<(), SolverError> {
    if y.len() != g.edge_count() {
        return Err(SolverError::LengthMismatch { expected: g.edge_count(), got: y.len() });
    }
    Ok(())
}

fn source_target(g: &Graph, p: &Requirement) -> Result<(usize, usize), SolverError> {
    match *p {
        Requirement::SourceTarget { source, target } => {
            let s = g
                .node_index(source)
                .ok_or_else(|| SolverError::RequirementMismatch(format!("unknown node {source}")))?;
            let t = g
                .node_index(target)
                .ok_or_else(|| SolverError::RequirementMismatch(format!("unknown node {target}")))?;
            if s == t {
                return Err(SolverError::RequirementMismatch("source equals target".into()));
            }
            Ok((s, t))
        }
        Requirement::None => Err(SolverError::RequirementMismatch(
            "shortest path needs a source/target pair".into(),
        )),
    }
}

fn require_tour(g: &Graph, p: &Requirement) -> Result<(), SolverError> {
    if !matches!(p, Requirement::None) {
        return Err(SolverError::RequirementMismatch(
            "tour solvers take an empty requirement".into(),
        ));
    }
    if g.directed() {
        return Err(SolverError::UndirectedRequired);
    }
    if g.node_count() < 3 {
        return Err(SolverError::NoCycleExists);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Dijkstra
// ---------------------------------------------------------------------------

#[derive(PartialEq)]
struct HeapState {
    cost: f64,
    node: usize,
}

impl Eq for HeapState {}

impl Ord for HeapState {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap: invert so the smallest (cost, node) pops first.
        other
            .cost
            .partial_cmp(&self.cost)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapState {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest path as a list of edge ids, `None` when `t` is unreachable.
/// Ties expand the smallest node id first.
fn dijkstra(g: &Graph, costs: &[f64], s: usize, t: usize) -> Option<Vec<usize>> {
    let n = g.node_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut heap = BinaryHeap::new();
    dist[s] = 0.0;
    heap.push(HeapState { cost: 0.0, node: s });
    while let Some(HeapState { cost, node }) = heap.pop() {
        if cost > dist[node] {
            continue;
        }
        if node == t {
            break;
        }
        for &(edge, next) in g.out_edges(node) {
            let cand = cost + costs[edge];
            if cand < dist[next] {
                dist[next] = cand;
                pred[next] = Some((node, edge));
                heap.push(HeapState { cost: cand, node: next });
            }
        }
    }
    if dist[t].is_infinite() {
        return None;
    }
    let mut edges = Vec::new();
    let mut cur = t;
    while cur != s {
        let (prev, edge) = pred[cur].expect("predecessor chain");
        edges.push(edge);
        cur = prev;
    }
    edges.reverse();
    Some(edges)
}

// ---------------------------------------------------------------------------
// Tours
// ---------------------------------------------------------------------------

/// Dense cost and edge-id matrices for an undirected graph.
fn tour_matrices(g: &Graph, costs: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let n = g.node_count();
    let mut c = vec![f64::INFINITY; n * n];
    let mut eid = vec![usize::MAX; n * n];
    for e in 0..g.edge_count() {
        let (u, v) = g.edge_endpoints(e);
        c[u * n + v] = costs[e];
        c[v * n + u] = costs[e];
        eid[u * n + v] = e;
        eid[v * n + u] = e;
    }
    (c, eid)
}

fn tour_edges(tour: &[usize], eid: &[usize], n: usize) -> Result<Vec<usize>, SolverError> {
    let mut edges = Vec::with_capacity(tour.len());
    for i in 0..tour.len() {
        let u = tour[i];
        let v = tour[(i + 1) % tour.len()];
        let e = eid[u * n + v];
        if e == usize::MAX {
            return Err(SolverError::NoCycleExists);
        }
        edges.push(e);
    }
    edges.sort_unstable();
    Ok(edges)
}

/// Held-Karp dynamic program over subsets, start fixed at dense node 0.
fn held_karp(g: &Graph, costs: &[f64]) -> Result<Vec<usize>, SolverError> {
    let n = g.node_count();
    let (c, eid) = tour_matrices(g, costs);
    let full: usize = (1 << n) - 1;
    let mut dp = vec![f64::INFINITY; (1 << n) * n];
    let mut parent = vec![u8::MAX; (1 << n) * n];
    dp[n] = 0.0; // mask = 1 (just node 0), last = 0
    let mut mask = 1usize;
    while mask <= full {
        let base = mask * n;
        for last in 0..n {
            let d = dp[base + last];
            if !d.is_finite() {
                continue;
            }
            let row = last * n;
            for next in 1..n {
                if mask & (1 << next) != 0 {
                    continue;
                }
                let w = c[row + next];
                if !w.is_finite() {
                    continue;
                }
                let cand = d + w;
                let idx = (mask | (1 << next)) * n + next;
                if cand < dp[idx] {
                    dp[idx] = cand;
                    parent[idx] = last as u8;
                }
            }
        }
        mask += 2; // only masks containing node 0
    }
    let mut best = f64::INFINITY;
    let mut best_last = usize::MAX;
    for last in 1..n {
        let back = c[last * n];
        let d = dp[full * n + last];
        if !d.is_finite() || !back.is_finite() {
            continue;
        }
        let total = d + back;
        if total < best {
            best = total;
            best_last = last;
        }
    }
    if best_last == usize::MAX {
        return Err(SolverError::NoCycleExists);
    }
    let mut tour = Vec::with_capacity(n);
    let mut mask = full;
    let mut cur = best_last;
    while cur != 0 {
        tour.push(cur);
        let prev = parent[mask * n + cur] as usize;
        mask &= !(1 << cur);
        cur = prev;
    }
    tour.push(0);
    tour.reverse();
    tour_edges(&tour, &eid, n)
}

/// Nearest-neighbor construction followed by full 2-opt descent.
fn nearest_neighbor_two_opt(g: &Graph, costs: &[f64]) -> Result<Vec<usize>, SolverError> {
    let n = g.node_count();
    if g.edge_count() != n * (n - 1) / 2 {
        return Err(SolverError::IncompleteGraph);
    }
    let (c, eid) = tour_matrices(g, costs);
    let mut tour = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let mut cur = 0usize;
    tour.push(0);
    visited[0] = true;
    for _ in 1..n {
        let mut best = f64::INFINITY;
        let mut pick = usize::MAX;
        for v in 0..n {
            if !visited[v] && c[cur * n + v] < best {
                best = c[cur * n + v];
                pick = v;
            }
        }
        if pick == usize::MAX {
            return Err(SolverError::NoCycleExists);
        }
        visited[pick] = true;
        tour.push(pick);
        cur = pick;
    }
    two_opt_descend(&mut tour, &c, n);
    tour_edges(&tour, &eid, n)
}

/// Apply best-improvement 2-opt moves until none improves the tour.
fn two_opt_descend(tour: &mut [usize], c: &[f64], n: usize) {
    const MIN_GAIN: f64 = 1e-12;
    loop {
        let mut best_delta = -MIN_GAIN;
        let mut best = None;
        for i in 0..n - 1 {
            for j in i + 1..n {
                if i == 0 && j == n - 1 {
                    continue; // reversing the whole interior is a no-op
                }
                let a = tour[i];
                let b = tour[(i + 1) % n];
                let d = tour[j];
                let e = tour[(j + 1) % n];
                let delta = c[a * n + d] + c[b * n + e] - c[a * n + b] - c[d * n + e];
                if delta < best_delta {
                    best_delta = delta;
                    best = Some((i, j));
                }
            }
        }
        let Some((i, j)) = best else {
            return;
        };
        tour[i + 1..=j].reverse();
    }
}

/// Exhaustively check whether any 2-opt move improves the tour (test oracle).
pub fn has_improving_two_opt_move(g: &Graph, costs: &[f64], x: &SolutionVector) -> bool {
    let n = g.node_count();
    let (c, _) = tour_matrices(g, costs);
    let Some(tour) = cycle_node_order(g, x) else {
        return false;
    };
    for i in 0..n - 1 {
        for j in i + 1..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let a = tour[i];
            let b = tour[(i + 1) % n];
            let d = tour[j];
            let e = tour[(j + 1) % n];
            let delta = c[a * n + d] + c[b * n + e] - c[a * n + b] - c[d * n + e];
            if delta < -1e-9 {
                return true;
            }
        }
    }
    false
}

/// Node order of an (undirected) cycle solution, starting at dense node 0.
pub fn cycle_node_order(g: &Graph, x: &SolutionVector) -> Option<Vec<usize>> {
    let n = g.node_count();
    let mut incident = vec![Vec::new(); n];
    for e in x.edge_ids() {
        let (u, v) = g.edge_endpoints(e);
        incident[u].push((e, v));
        incident[v].push((e, u));
    }
    let mut order = Vec::with_capacity(n);
    let mut used = vec![false; x.len()];
    let mut cur = 0usize;
    for _ in 0..n {
        order.push(cur);
        let &(e, next) = incident[cur].iter().find(|(e, _)| !used[*e])?;
        used[e] = true;
        cur = next;
    }
    (cur == 0).then_some(order)
}

// ---------------------------------------------------------------------------
// Enumeration oracles
// ---------------------------------------------------------------------------

fn sorted_cost(costs: &[f64], edges: &mut Vec<usize>) -> f64 {
    edges.sort_unstable();
    edges.iter().map(|&e| costs[e]).sum()
}

fn better(cost: f64, edges: &[usize], best: &mut Option<(f64, Vec<usize>)>) {
    match best {
        None => *best = Some((cost, edges.to_vec())),
        Some((bc, be)) => {
            if cost < *bc || (cost == *bc && edges < be.as_slice()) {
                *best = Some((cost, edges.to_vec()));
            }
        }
    }
}

fn brute_force_spp(
    g: &Graph,
    costs: &[f64],
    s: usize,
    t: usize,
) -> Result<SolutionVector, SolverError> {
    let n = g.node_count();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut visited = vec![false; n];
    let mut path_edges = Vec::new();
    fn dfs(
        g: &Graph,
        costs: &[f64],
        cur: usize,
        t: usize,
        visited: &mut [bool],
        path_edges: &mut Vec<usize>,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        if cur == t {
            let mut edges = path_edges.clone();
            let cost = sorted_cost(costs, &mut edges);
            better(cost, &edges, best);
            return;
        }
        visited[cur] = true;
        for &(edge, next) in g.out_edges(cur) {
            if visited[next] {
                continue;
            }
            path_edges.push(edge);
            dfs(g, costs, next, t, visited, path_edges, best);
            path_edges.pop();
        }
        visited[cur] = false;
    }
    dfs(g, costs, s, t, &mut visited, &mut path_edges, &mut best);
    let (_, edges) = best.ok_or(SolverError::NoPathExists)?;
    Ok(SolutionVector::from_edge_ids(g.edge_count(), &edges).expect("oracle edges"))
}

fn brute_force_tsp(g: &Graph, costs: &[f64]) -> Result<SolutionVector, SolverError> {
    let n = g.node_count();
    if n < 3 {
        return Err(SolverError::NoCycleExists);
    }
    let (_, eid) = tour_matrices(g, costs);
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut perm: Vec<usize> = (1..n).collect();
    permute(&mut perm, 0, &mut |order| {
        let mut tour = Vec::with_capacity(n);
        tour.push(0);
        tour.extend_from_slice(order);
        if let Ok(mut edges) = tour_edges(&tour, &eid, n) {
            let cost = sorted_cost(costs, &mut edges);
            better(cost, &edges, &mut best);
        }
    });
    let (_, edges) = best.ok_or(SolverError::NoCycleExists)?;
    Ok(SolutionVector::from_edge_ids(g.edge_count(), &edges).expect("oracle edges"))
}

fn permute<F: FnMut(&[usize])>(items: &mut [usize], k: usize, f: &mut F) {
    if k == items.len() {
        f(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, f);
        items.swap(k, i);
    }
}
