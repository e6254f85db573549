//! Graph representation shared by every other module: 2-D embedded nodes,
//! densely indexed edges, binary solution vectors over edges, and the
//! feasibility checks for simple paths and Hamiltonian cycles.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Errors raised by graph construction, validation and aggregation.
#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("duplicate node id {0}")]
    DuplicateNode(usize),
    #[error("edge {edge} references unknown node id {node}")]
    DanglingEdge { edge: usize, node: usize },
    #[error("edge {0} is a self-loop")]
    SelfLoop(usize),
    #[error("duplicate edge between nodes {src} and {dst}")]
    DuplicateEdge { src: usize, dst: usize },
    #[error("edge ids are not dense 0..{expected}: saw id {got}")]
    NonDenseEdgeIds { expected: usize, got: usize },
    #[error("solution vector length {got} does not match edge count {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("solution bits must be 0 or 1, found {0}")]
    NonBinaryBit(u8),
    #[error("empty input")]
    EmptyInput,
    #[error("graph file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
}

/// A node with its mandatory planar position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodePoint {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

/// A directed (or canonical undirected) edge between two node ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub id: usize,
    pub src: usize,
    pub dst: usize,
}

/// Immutable graph over which all solutions live.
///
/// Edge ids are dense `0..edge_count()` in input order. Undirected graphs
/// store one canonical edge per node pair; adjacency for them is expanded in
/// both directions with the same edge id.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    directed: bool,
    nodes: Vec<NodePoint>,
    edges: Vec<GraphEdge>,
    index: GraphIndex,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct GraphIndex {
    node_pos: HashMap<usize, usize>,
    /// (edge id, neighbor dense index) per dense node, in edge-id order.
    out_adj: Vec<Vec<(usize, usize)>>,
    /// Dense (src, dst) per edge id.
    endpoints: Vec<(usize, usize)>,
    bbox: (f64, f64, f64, f64),
}

/// Build a graph from nodes and `(src, dst)` pairs; edge ids are assigned in
/// input order.
pub fn build_graph(
    nodes: Vec<NodePoint>,
    edges: Vec<(usize, usize)>,
    directed: bool,
) -> Result<Graph, GraphError> {
    let mut node_pos = HashMap::with_capacity(nodes.len());
    for (i, n) in nodes.iter().enumerate() {
        if node_pos.insert(n.id, i).is_some() {
            return Err(GraphError::DuplicateNode(n.id));
        }
    }
    let mut seen_pairs = HashMap::new();
    let mut graph_edges = Vec::with_capacity(edges.len());
    for (id, (src, dst)) in edges.into_iter().enumerate() {
        if src == dst {
            return Err(GraphError::SelfLoop(id));
        }
        for node in [src, dst] {
            if !node_pos.contains_key(&node) {
                return Err(GraphError::DanglingEdge { edge: id, node });
            }
        }
        let key = if directed {
            (src, dst)
        } else {
            (src.min(dst), src.max(dst))
        };
        if seen_pairs.insert(key, id).is_some() {
            return Err(GraphError::DuplicateEdge { src, dst });
        }
        graph_edges.push(GraphEdge { id, src, dst });
    }
    let mut g = Graph {
        directed,
        nodes,
        edges: graph_edges,
        index: GraphIndex::default(),
    };
    g.rebuild_index();
    Ok(g)
}

impl Graph {
    fn rebuild_index(&mut self) {
        let node_pos: HashMap<usize, usize> =
            self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let mut out_adj = vec![Vec::new(); self.nodes.len()];
        let mut endpoints = Vec::with_capacity(self.edges.len());
        for e in &self.edges {
            let s = node_pos[&e.src];
            let t = node_pos[&e.dst];
            out_adj[s].push((e.id, t));
            if !self.directed {
                out_adj[t].push((e.id, s));
            }
            endpoints.push((s, t));
        }
        let mut bbox = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for n in &self.nodes {
            bbox.0 = bbox.0.min(n.x);
            bbox.1 = bbox.1.min(n.y);
            bbox.2 = bbox.2.max(n.x);
            bbox.3 = bbox.3.max(n.y);
        }
        self.index = GraphIndex { node_pos, out_adj, endpoints, bbox };
    }

    pub fn directed(&self) -> bool {
        self.directed
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[NodePoint] {
        &self.nodes
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    /// Dense index of a node id, if present.
    pub fn node_index(&self, id: usize) -> Option<usize> {
        self.index.node_pos.get(&id).copied()
    }

    /// Dense `(src, dst)` endpoints of an edge.
    pub fn edge_endpoints(&self, edge: usize) -> (usize, usize) {
        self.index.endpoints[edge]
    }

    /// Outgoing `(edge id, neighbor)` pairs of a dense node index. For
    /// undirected graphs this includes both traversal directions.
    pub fn out_edges(&self, node: usize) -> &[(usize, usize)] {
        &self.index.out_adj[node]
    }

    pub fn position(&self, node: usize) -> (f64, f64) {
        let n = &self.nodes[node];
        (n.x, n.y)
    }

    /// Position rescaled into the unit square of the graph bounding box.
    pub fn normalized_position(&self, node: usize) -> (f64, f64) {
        let (x, y) = self.position(node);
        let (x0, y0, x1, y1) = self.index.bbox;
        let nx = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.5 };
        let ny = if y1 > y0 { (y - y0) / (y1 - y0) } else { 0.5 };
        (nx, ny)
    }

    /// Euclidean length of an edge.
    pub fn edge_length(&self, edge: usize) -> f64 {
        let (s, t) = self.edge_endpoints(edge);
        let (sx, sy) = self.position(s);
        let (tx, ty) = self.position(t);
        ((sx - tx).powi(2) + (sy - ty).powi(2)).sqrt()
    }

    /// Midpoint of an edge in normalized coordinates.
    pub fn edge_midpoint_normalized(&self, edge: usize) -> (f64, f64) {
        let (s, t) = self.edge_endpoints(edge);
        let (sx, sy) = self.normalized_position(s);
        let (tx, ty) = self.normalized_position(t);
        ((sx + tx) / 2.0, (sy + ty) / 2.0)
    }
}

/// Binary vector of length `|E|` marking used edges.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SolutionVector {
    bits: Vec<u8>,
}

impl SolutionVector {
    pub fn from_bits(bits: Vec<u8>) -> Result<Self, GraphError> {
        if let Some(&b) = bits.iter().find(|&&b| b > 1) {
            return Err(GraphError::NonBinaryBit(b));
        }
        Ok(Self { bits })
    }

    pub fn from_edge_ids(num_edges: usize, ids: &[usize]) -> Result<Self, GraphError> {
        let mut bits = vec![0u8; num_edges];
        for &id in ids {
            if id >= num_edges {
                return Err(GraphError::LengthMismatch { expected: num_edges, got: id + 1 });
            }
            bits[id] = 1;
        }
        Ok(Self { bits })
    }

    pub fn zeros(num_edges: usize) -> Self {
        Self { bits: vec![0; num_edges] }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn is_set(&self, edge: usize) -> bool {
        self.bits[edge] == 1
    }

    pub fn edge_ids(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| (b == 1).then_some(i))
            .collect()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    /// Inner product with a cost-like vector, accumulated in edge-id order.
    pub fn dot(&self, costs: &[f64]) -> f64 {
        self.bits
            .iter()
            .zip(costs)
            .filter(|(&b, _)| b == 1)
            .map(|(_, &c)| c)
            .sum()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }
}

/// Problem requirement: start/target pair for shortest paths, empty for tours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Requirement {
    SourceTarget { source: usize, target: usize },
    None,
}

/// Why a solution was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Infeasibility {
    DisconnectedEdges,
    WrongEndpoints,
    NotACycle,
    NodeRevisited,
    NotHamiltonian,
}

/// Outcome of [`validate_solution`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub feasible: bool,
    pub failure: Option<Infeasibility>,
}

impl ValidationReport {
    fn ok() -> Self {
        Self { feasible: true, failure: None }
    }

    fn fail(f: Infeasibility) -> Self {
        Self { feasible: false, failure: Some(f) }
    }
}

/// Check that `x` is a simple path from source to target (for
/// `Requirement::SourceTarget`) or a single Hamiltonian cycle over all nodes
/// (for `Requirement::None`).
pub fn validate_solution(
    g: &Graph,
    x: &SolutionVector,
    p: &Requirement,
) -> Result<ValidationReport, GraphError> {
    if x.len() != g.edge_count() {
        return Err(GraphError::LengthMismatch { expected: g.edge_count(), got: x.len() });
    }
    match *p {
        Requirement::SourceTarget { source, target } => {
            let (Some(s), Some(t)) = (g.node_index(source), g.node_index(target)) else {
                return Ok(ValidationReport::fail(Infeasibility::WrongEndpoints));
            };
            if s == t {
                return Ok(ValidationReport::fail(Infeasibility::WrongEndpoints));
            }
            if g.directed() {
                Ok(validate_directed_path(g, x, s, t))
            } else {
                Ok(validate_undirected_path(g, x, s, t))
            }
        }
        Requirement::None => Ok(validate_hamiltonian_cycle(g, x)),
    }
}

fn validate_directed_path(g: &Graph, x: &SolutionVector, s: usize, t: usize) -> ValidationReport {
    let n = g.node_count();
    let selected = x.count_ones();
    if selected == 0 {
        return ValidationReport::fail(Infeasibility::WrongEndpoints);
    }
    let mut next = vec![usize::MAX; n];
    let mut in_deg = vec![0usize; n];
    for e in 0..x.len() {
        if !x.is_set(e) {
            continue;
        }
        let (u, v) = g.edge_endpoints(e);
        if next[u] != usize::MAX {
            return ValidationReport::fail(Infeasibility::NodeRevisited);
        }
        next[u] = v;
        in_deg[v] += 1;
        if in_deg[v] > 1 {
            return ValidationReport::fail(Infeasibility::NodeRevisited);
        }
    }
    let mut visited = vec![false; n];
    let mut cur = s;
    visited[s] = true;
    let mut steps = 0usize;
    while next[cur] != usize::MAX {
        cur = next[cur];
        steps += 1;
        if visited[cur] {
            return ValidationReport::fail(Infeasibility::NodeRevisited);
        }
        visited[cur] = true;
    }
    if cur != t {
        return ValidationReport::fail(Infeasibility::WrongEndpoints);
    }
    if steps != selected {
        return ValidationReport::fail(Infeasibility::DisconnectedEdges);
    }
    ValidationReport::ok()
}

fn validate_undirected_path(g: &Graph, x: &SolutionVector, s: usize, t: usize) -> ValidationReport {
    let n = g.node_count();
    let selected = x.count_ones();
    if selected == 0 {
        return ValidationReport::fail(Infeasibility::WrongEndpoints);
    }
    let mut incident = vec![Vec::new(); n];
    for e in 0..x.len() {
        if !x.is_set(e) {
            continue;
        }
        let (u, v) = g.edge_endpoints(e);
        incident[u].push((e, v));
        incident[v].push((e, u));
        if incident[u].len() > 2 || incident[v].len() > 2 {
            return ValidationReport::fail(Infeasibility::NodeRevisited);
        }
    }
    if incident[s].len() != 1 || incident[t].len() != 1 {
        return ValidationReport::fail(Infeasibility::WrongEndpoints);
    }
    let mut used = vec![false; x.len()];
    let mut cur = s;
    let mut steps = 0usize;
    loop {
        let Some(&(e, nxt)) = incident[cur].iter().find(|(e, _)| !used[*e]) else {
            break;
        };
        used[e] = true;
        cur = nxt;
        steps += 1;
    }
    if cur != t {
        return ValidationReport::fail(Infeasibility::WrongEndpoints);
    }
    if steps != selected {
        return ValidationReport::fail(Infeasibility::DisconnectedEdges);
    }
    ValidationReport::ok()
}

fn validate_hamiltonian_cycle(g: &Graph, x: &SolutionVector) -> ValidationReport {
    let n = g.node_count();
    let selected = x.count_ones();
    if selected == 0 {
        return ValidationReport::fail(Infeasibility::NotACycle);
    }
    if g.directed() {
        let mut next = vec![usize::MAX; n];
        let mut in_deg = vec![0usize; n];
        let mut start = usize::MAX;
        for e in 0..x.len() {
            if !x.is_set(e) {
                continue;
            }
            let (u, v) = g.edge_endpoints(e);
            if next[u] != usize::MAX {
                return ValidationReport::fail(Infeasibility::NodeRevisited);
            }
            next[u] = v;
            in_deg[v] += 1;
            if in_deg[v] > 1 {
                return ValidationReport::fail(Infeasibility::NodeRevisited);
            }
            start = start.min(u);
        }
        // Every node with an outgoing edge must have one incoming edge.
        for v in 0..n {
            if (next[v] != usize::MAX) != (in_deg[v] == 1) {
                return ValidationReport::fail(Infeasibility::NotACycle);
            }
        }
        let mut cur = start;
        let mut steps = 0usize;
        loop {
            cur = next[cur];
            steps += 1;
            if cur == start {
                break;
            }
            if steps > selected {
                return ValidationReport::fail(Infeasibility::NotACycle);
            }
        }
        if steps != selected {
            return ValidationReport::fail(Infeasibility::DisconnectedEdges);
        }
        if steps != n {
            return ValidationReport::fail(Infeasibility::NotHamiltonian);
        }
        ValidationReport::ok()
    } else {
        let mut incident = vec![Vec::new(); n];
        let mut start = usize::MAX;
        for e in 0..x.len() {
            if !x.is_set(e) {
                continue;
            }
            let (u, v) = g.edge_endpoints(e);
            incident[u].push((e, v));
            incident[v].push((e, u));
            if incident[u].len() > 2 || incident[v].len() > 2 {
                return ValidationReport::fail(Infeasibility::NodeRevisited);
            }
            start = start.min(u.min(v));
        }
        if incident.iter().any(|l| l.len() == 1) {
            return ValidationReport::fail(Infeasibility::NotACycle);
        }
        let mut used = vec![false; x.len()];
        let mut cur = start;
        let mut steps = 0usize;
        let mut seen = vec![false; n];
        loop {
            seen[cur] = true;
            let Some(&(e, nxt)) = incident[cur].iter().find(|(e, _)| !used[*e]) else {
                return ValidationReport::fail(Infeasibility::NotACycle);
            };
            used[e] = true;
            cur = nxt;
            steps += 1;
            if cur == start {
                break;
            }
            if seen[cur] {
                return ValidationReport::fail(Infeasibility::NotACycle);
            }
        }
        if steps != selected {
            return ValidationReport::fail(Infeasibility::DisconnectedEdges);
        }
        if steps != n {
            return ValidationReport::fail(Infeasibility::NotHamiltonian);
        }
        ValidationReport::ok()
    }
}

/// Edge ids of a feasible source/target path in traversal order.
/// Returns `None` when the solution is not a simple path for `p`.
pub fn path_edge_order(g: &Graph, x: &SolutionVector, p: &Requirement) -> Option<Vec<usize>> {
    let Requirement::SourceTarget { source, target } = *p else {
        return None;
    };
    if !validate_solution(g, x, p).ok()?.feasible {
        return None;
    }
    let s = g.node_index(source)?;
    let t = g.node_index(target)?;
    let mut order = Vec::with_capacity(x.count_ones());
    let mut used = vec![false; x.len()];
    let mut cur = s;
    while cur != t {
        let &(e, next) = g
            .out_edges(cur)
            .iter()
            .find(|(e, _)| x.is_set(*e) && !used[*e])?;
        used[e] = true;
        order.push(e);
        cur = next;
    }
    Some(order)
}

/// Per-edge usage counts of a set of solutions; normalized, a probability
/// distribution over edges.
pub fn edge_usage(xs: &[SolutionVector], normalize: bool) -> Result<Vec<f64>, GraphError> {
    let first = xs.first().ok_or(GraphError::EmptyInput)?;
    let len = first.len();
    let mut counts = vec![0.0f64; len];
    for x in xs {
        if x.len() != len {
            return Err(GraphError::LengthMismatch { expected: len, got: x.len() });
        }
        for (c, &b) in counts.iter_mut().zip(x.bits()) {
            *c += b as f64;
        }
    }
    if normalize {
        let total: f64 = counts.iter().sum();
        if total <= 0.0 {
            return Err(GraphError::EmptyInput);
        }
        for c in &mut counts {
            *c /= total;
        }
    }
    Ok(counts)
}

// ---------------------------------------------------------------------------
// Graph JSON file format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct GraphFile {
    directed: bool,
    nodes: Vec<NodePoint>,
    edges: Vec<GraphEdge>,
}

/// Serialize a graph to the on-disk JSON schema.
pub fn graph_to_json(g: &Graph) -> String {
    let file = GraphFile {
        directed: g.directed,
        nodes: g.nodes.clone(),
        edges: g.edges.clone(),
    };
    serde_json::to_string(&file).expect("graph serialization cannot fail")
}

/// Parse a graph from the JSON schema, rejecting non-dense edge ids.
pub fn graph_from_json(text: &str) -> Result<Graph, GraphError> {
    let file: GraphFile =
        serde_json::from_str(text).map_err(|e| GraphError::Format(e.to_string()))?;
    let mut edges = file.edges;
    let m = edges.len();
    let mut seen = vec![false; m];
    for e in &edges {
        if e.id >= m || seen[e.id] {
            return Err(GraphError::NonDenseEdgeIds { expected: m, got: e.id });
        }
        seen[e.id] = true;
    }
    edges.sort_by_key(|e| e.id);
    build_graph(
        file.nodes,
        edges.iter().map(|e| (e.src, e.dst)).collect(),
        file.directed,
    )
}

pub fn save_graph(path: &std::path::Path, g: &Graph) -> Result<(), GraphError> {
    std::fs::write(path, graph_to_json(g)).map_err(|e| GraphError::Io(e.to_string()))
}

pub fn load_graph(path: &std::path::Path) -> Result<Graph, GraphError> {
    let text = std::fs::read_to_string(path).map_err(|e| GraphError::Io(e.to_string()))?;
    graph_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn nodes(n: usize) -> Vec<NodePoint> {
        (0..n)
            .map(|i| NodePoint { id: i, x: i as f64, y: 0.0 })
            .collect()
    }

    #[test]
    fn smallest_graph() {
        let g = build_graph(nodes(2), vec![(0, 1)], true).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.edges()[0].id, 0);
    }

    #[test]
    fn dangling_edge_rejected() {
        let err = build_graph(nodes(3), vec![(0, 99)], true).unwrap_err();
        assert_eq!(err, GraphError::DanglingEdge { edge: 0, node: 99 });
    }

    #[test]
    fn self_loop_rejected() {
        let err = build_graph(nodes(3), vec![(1, 1)], true).unwrap_err();
        assert_eq!(err, GraphError::SelfLoop(0));
    }

    #[test]
    fn duplicate_node_rejected() {
        let mut ns = nodes(3);
        ns[2].id = 0;
        let err = build_graph(ns, vec![], true).unwrap_err();
        assert_eq!(err, GraphError::DuplicateNode(0));
    }

    #[test]
    fn undirected_duplicate_pair_rejected() {
        let err = build_graph(nodes(3), vec![(0, 1), (1, 0)], false).unwrap_err();
        assert_eq!(err, GraphError::DuplicateEdge { src: 1, dst: 0 });
    }

    #[test]
    fn line_path_is_feasible() {
        // s=0 -> a=1 -> t=2
        let g = build_graph(nodes(3), vec![(0, 1), (1, 2)], true).unwrap();
        let x = SolutionVector::from_edge_ids(2, &[0, 1]).unwrap();
        let p = Requirement::SourceTarget { source: 0, target: 2 };
        let r = validate_solution(&g, &x, &p).unwrap();
        assert!(r.feasible);
        assert_eq!(r.failure, None);
    }

    #[test]
    fn disjoint_segments_are_disconnected() {
        let g = build_graph(nodes(5), vec![(0, 1), (1, 2), (3, 4)], true).unwrap();
        let x = SolutionVector::from_edge_ids(3, &[0, 2]).unwrap();
        let p = Requirement::SourceTarget { source: 0, target: 1 };
        let r = validate_solution(&g, &x, &p).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.failure, Some(Infeasibility::DisconnectedEdges));
    }

    #[test]
    fn wrong_endpoint_detected() {
        let g = build_graph(nodes(3), vec![(0, 1), (1, 2)], true).unwrap();
        let x = SolutionVector::from_edge_ids(2, &[0]).unwrap();
        let p = Requirement::SourceTarget { source: 0, target: 2 };
        let r = validate_solution(&g, &x, &p).unwrap();
        assert_eq!(r.failure, Some(Infeasibility::WrongEndpoints));
    }

    #[test]
    fn node_revisit_detected() {
        // 0->1, 1->2, 2->1 revisits node 1.
        let g = build_graph(nodes(3), vec![(0, 1), (1, 2), (2, 1)], true).unwrap();
        let x = SolutionVector::from_edge_ids(3, &[0, 1, 2]).unwrap();
        let p = Requirement::SourceTarget { source: 0, target: 1 };
        let r = validate_solution(&g, &x, &p).unwrap();
        assert_eq!(r.failure, Some(Infeasibility::NodeRevisited));
    }

    #[test]
    fn triangle_cycle_is_feasible() {
        let g = build_graph(nodes(3), vec![(0, 1), (1, 2), (0, 2)], false).unwrap();
        let x = SolutionVector::from_edge_ids(3, &[0, 1, 2]).unwrap();
        let r = validate_solution(&g, &x, &Requirement::None).unwrap();
        assert!(r.feasible);
    }

    #[test]
    fn partial_cycle_not_hamiltonian() {
        // Triangle on 4 nodes, node 3 left out.
        let g =
            build_graph(nodes(4), vec![(0, 1), (1, 2), (0, 2), (2, 3)], false).unwrap();
        let x = SolutionVector::from_edge_ids(4, &[0, 1, 2]).unwrap();
        let r = validate_solution(&g, &x, &Requirement::None).unwrap();
        assert_eq!(r.failure, Some(Infeasibility::NotHamiltonian));
    }

    #[test]
    fn two_disjoint_cycles_rejected() {
        let g = build_graph(
            nodes(6),
            vec![(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)],
            false,
        )
        .unwrap();
        let x = SolutionVector::from_edge_ids(6, &[0, 1, 2, 3, 4, 5]).unwrap();
        let r = validate_solution(&g, &x, &Requirement::None).unwrap();
        assert_eq!(r.failure, Some(Infeasibility::DisconnectedEdges));
    }

    #[test]
    fn open_chain_not_a_cycle() {
        let g = build_graph(nodes(3), vec![(0, 1), (1, 2), (0, 2)], false).unwrap();
        let x = SolutionVector::from_edge_ids(3, &[0, 1]).unwrap();
        let r = validate_solution(&g, &x, &Requirement::None).unwrap();
        assert_eq!(r.failure, Some(Infeasibility::NotACycle));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let g = build_graph(nodes(3), vec![(0, 1)], true).unwrap();
        let x = SolutionVector::from_bits(vec![1, 0]).unwrap();
        let p = Requirement::SourceTarget { source: 0, target: 1 };
        assert!(matches!(
            validate_solution(&g, &x, &p),
            Err(GraphError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn usage_single_path() {
        let x = SolutionVector::from_edge_ids(4, &[0, 2]).unwrap();
        let counts = edge_usage(&[x], false).unwrap();
        assert_eq!(counts, vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn usage_scale_invariant_when_normalized() {
        let x = SolutionVector::from_edge_ids(4, &[0, 2]).unwrap();
        let one = edge_usage(std::slice::from_ref(&x), true).unwrap();
        let two = edge_usage(&[x.clone(), x], true).unwrap();
        assert_eq!(one, two);
        assert!((one.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn usage_empty_input_rejected() {
        assert_eq!(edge_usage(&[], true).unwrap_err(), GraphError::EmptyInput);
    }

    #[test]
    fn usage_matches_bernoulli_expectation() {
        // Monte Carlo oracle: sample each edge with a known probability and
        // check counts stay within 3 sigma of n*p.
        let probs = [0.1, 0.5, 0.9, 0.3];
        let n = 100usize;
        let mut rng = StdRng::seed_from_u64(42);
        let xs: Vec<SolutionVector> = (0..n)
            .map(|_| {
                let bits = probs
                    .iter()
                    .map(|&p| (rng.gen::<f64>() < p) as u8)
                    .collect();
                SolutionVector::from_bits(bits).unwrap()
            })
            .collect();
        let counts = edge_usage(&xs, false).unwrap();
        for (i, &p) in probs.iter().enumerate() {
            let mean = n as f64 * p;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (counts[i] - mean).abs() <= 3.0 * sigma,
                "edge {i}: count {} vs expectation {mean} (sigma {sigma})",
                counts[i]
            );
        }
    }

    #[test]
    fn json_round_trip_and_dense_id_check() {
        let g = build_graph(nodes(3), vec![(0, 1), (1, 2)], true).unwrap();
        let text = graph_to_json(&g);
        let g2 = graph_from_json(&text).unwrap();
        assert_eq!(g, g2);

        let bad = text.replace("\"id\":1,\"src\":1", "\"id\":7,\"src\":1");
        assert!(matches!(
            graph_from_json(&bad),
            Err(GraphError::NonDenseEdgeIds { .. })
        ));
    }
}
