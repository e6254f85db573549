//! Synthetic data: random geometric graphs with distance-decaying edge
//! probability, latitude-biased agent costs with per-sample noise, and
//! complete tour graphs whose edge costs are a smooth nonlinear function of
//! hidden features. Generation is a pure function of spec plus seed.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::graph::{
    build_graph, validate_solution, Graph, GraphError, NodePoint, Requirement, SolutionVector,
};
use crate::model::TrainSample;
use crate::neural::{sigmoid, softplus};
use crate::seeding::{stream_rng, StreamPurpose};
use crate::solvers::{solve, CostVector, SolverError, SolverKind, EXACT_TSP_NODE_LIMIT};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum DataError {
    #[error("largest component holds {giant} of {nodes} nodes, below the 90% threshold")]
    DisconnectedBeyondThreshold { giant: usize, nodes: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("record {line}: {reason}")]
    InfeasibleRecord { line: usize, reason: String },
    #[error("record {line}: dataset does not match the graph: {reason}")]
    GraphMismatch { line: usize, reason: String },
    #[error("parse error at line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("io: {0}")]
    Io(String),
}

/// Latitude preference of a synthetic agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentBias {
    South,
    North,
    None,
}

/// One cost-generating agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub bias: AgentBias,
    /// Multiplier strength of the latitude penalty.
    pub bias_strength: f64,
    /// Log-normal noise scale applied per sample.
    pub noise_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RequirementMode {
    /// One fixed source/target pair for the whole dataset.
    SingleSt,
    /// A fresh random pair per path.
    MultiSt,
}

/// Spec for the random geometric graph dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaxmanSpec {
    pub n_nodes: usize,
    pub alpha: f64,
    pub beta_w: f64,
    pub seed: u64,
    pub agents: Vec<AgentSpec>,
    pub n_paths: usize,
    pub requirement_mode: RequirementMode,
}

/// Spec for the hidden-feature tour dataset over a complete graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TspCostSpec {
    pub n_nodes: usize,
    /// Number of hidden features driving the nonlinear edge costs.
    pub n_features: usize,
    pub seed: u64,
    pub n_samples: usize,
}

/// One observation: a feasible solution, its requirement, and free-form
/// metadata (never visible to training, which only sees [`TrainSample`]s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub solution: SolutionVector,
    pub requirement: Requirement,
    pub meta: serde_json::Map<String, serde_json::Value>,
}

/// A collection of observations over one graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub edge_count: usize,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    /// Label-free view consumed by training.
    pub fn training_view(&self) -> Vec<TrainSample> {
        self.records
            .iter()
            .map(|r| TrainSample { solution: r.solution.clone(), requirement: r.requirement })
            .collect()
    }

    /// Integer metadata field, if present (e.g. the generating agent).
    pub fn meta_usize(&self, index: usize, key: &str) -> Option<usize> {
        self.records[index].meta.get(key)?.as_u64().map(|v| v as usize)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// First `train` records for training, the rest held out.
    pub fn split(&self, train: usize) -> (Dataset, Dataset) {
        let train = train.min(self.records.len());
        (
            Dataset { edge_count: self.edge_count, records: self.records[..train].to_vec() },
            Dataset { edge_count: self.edge_count, records: self.records[train..].to_vec() },
        )
    }
}

// ---------------------------------------------------------------------------
// Random geometric graph
// ---------------------------------------------------------------------------

/// Keep probability for a node pair at distance `d`:
/// `alpha * exp(-d / (beta_w * d_max))`.
pub fn waxman_edge_probability(d: f64, d_max: f64, alpha: f64, beta_w: f64) -> f64 {
    alpha * (-d / (beta_w * d_max)).exp()
}

/// Sample kept node pairs for fixed positions (separated out so tests can
/// re-draw edges over the same geometry).
pub(crate) fn sample_waxman_pairs<R: Rng + ?Sized>(
    positions: &[(f64, f64)],
    alpha: f64,
    beta_w: f64,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let n = positions.len();
    let mut d_max: f64 = 0.0;
    for u in 0..n {
        for v in u + 1..n {
            d_max = d_max.max(dist(positions[u], positions[v]));
        }
    }
    let mut pairs = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = waxman_edge_probability(dist(positions[u], positions[v]), d_max, alpha, beta_w);
            if rng.gen::<f64>() < p {
                pairs.push((u, v));
            }
        }
    }
    pairs
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Generate the directed random geometric graph: uniform nodes in the unit
/// square, pairs kept with the distance-decaying probability and stored as
/// two directed arcs, restricted to the largest connected component.
pub fn gen_waxman_graph(spec: &WaxmanSpec) -> Result<Graph, DataError> {
    if spec.n_nodes < 2 {
        return Err(DataError::InvalidSpec("need at least 2 nodes".into()));
    }
    if !(0.0..=1.0).contains(&spec.alpha) || spec.alpha == 0.0 {
        return Err(DataError::InvalidSpec("alpha must be in (0, 1]".into()));
    }
    if spec.beta_w <= 0.0 {
        return Err(DataError::InvalidSpec("beta_w must be positive".into()));
    }
    let mut rng = stream_rng(spec.seed, StreamPurpose::DataGen, 0, 0);
    let positions: Vec<(f64, f64)> =
        (0..spec.n_nodes).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect();
    let pairs = sample_waxman_pairs(&positions, spec.alpha, spec.beta_w, &mut rng);

    // Largest connected component of the undirected skeleton.
    let mut adj = vec![Vec::new(); spec.n_nodes];
    for &(u, v) in &pairs {
        adj[u].push(v);
        adj[v].push(u);
    }
    let mut component = vec![usize::MAX; spec.n_nodes];
    let mut sizes = Vec::new();
    for start in 0..spec.n_nodes {
        if component[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut stack = vec![start];
        let mut size = 0;
        component[start] = id;
        while let Some(u) = stack.pop() {
            size += 1;
            for &v in &adj[u] {
                if component[v] == usize::MAX {
                    component[v] = id;
                    stack.push(v);
                }
            }
        }
        sizes.push(size);
    }
    let (giant_id, &giant) =
        sizes.iter().enumerate().max_by_key(|(i, &s)| (s, usize::MAX - i)).expect("nonempty");
    if (giant as f64) < 0.9 * spec.n_nodes as f64 {
        return Err(DataError::DisconnectedBeyondThreshold { giant, nodes: spec.n_nodes });
    }

    let mut relabel = vec![usize::MAX; spec.n_nodes];
    let mut nodes = Vec::with_capacity(giant);
    for u in 0..spec.n_nodes {
        if component[u] == giant_id {
            relabel[u] = nodes.len();
            nodes.push(NodePoint { id: nodes.len(), x: positions[u].0, y: positions[u].1 });
        }
    }
    let mut edges = Vec::new();
    for &(u, v) in &pairs {
        if component[u] == giant_id && component[v] == giant_id {
            edges.push((relabel[u], relabel[v]));
            edges.push((relabel[v], relabel[u]));
        }
    }
    Ok(build_graph(nodes, edges, true)?)
}

/// Width of the latitude sigmoid in normalized coordinates.
const BIAS_SIGMOID_WIDTH: f64 = 0.15;

/// Euclidean edge lengths scaled by a smooth latitude penalty and log-normal
/// per-sample noise.
pub fn gen_agent_costs<R: Rng + ?Sized>(
    g: &Graph,
    agent: &AgentSpec,
    rng: &mut R,
) -> CostVector {
    let costs = (0..g.edge_count())
        .map(|e| {
            let base = g.edge_length(e);
            let (_, ym) = g.edge_midpoint_normalized(e);
            let s = match agent.bias {
                AgentBias::South => sigmoid((0.5 - ym) / BIAS_SIGMOID_WIDTH),
                AgentBias::North => sigmoid((ym - 0.5) / BIAS_SIGMOID_WIDTH),
                AgentBias::None => 0.0,
            };
            let noise: f64 = agent.noise_scale * rng.sample::<f64, _>(StandardNormal);
            base * (1.0 + agent.bias_strength * s) * noise.exp()
        })
        .collect();
    CostVector::new(costs).expect("generated costs are finite")
}

/// The fixed source/target pair for single-pair datasets: the most distant
/// node pair (deterministic, ties to smaller ids).
pub fn single_st_pair(g: &Graph) -> (usize, usize) {
    let n = g.node_count();
    let mut best = (0usize, 1usize);
    let mut best_d = -1.0;
    for u in 0..n {
        for v in u + 1..n {
            let d = dist(g.position(u), g.position(v));
            if d > best_d {
                best_d = d;
                best = (u, v);
            }
        }
    }
    (g.nodes()[best.0].id, g.nodes()[best.1].id)
}

/// Generate the path dataset: per path pick an agent uniformly, draw noisy
/// agent costs, pick the requirement, and record the solved shortest path.
/// The generating agent index is stored in metadata only.
pub fn gen_waxman_dataset(spec: &WaxmanSpec) -> Result<(Graph, Dataset), DataError> {
    if spec.agents.is_empty() {
        return Err(DataError::InvalidSpec("need at least one agent".into()));
    }
    if spec.n_paths == 0 {
        return Err(DataError::InvalidSpec("need at least one path".into()));
    }
    let g = gen_waxman_graph(spec)?;
    let fixed_pair = single_st_pair(&g);
    let n = g.node_count();
    let mut records = Vec::with_capacity(spec.n_paths);
    for i in 0..spec.n_paths {
        let mut rng = stream_rng(spec.seed, StreamPurpose::DataGen, 1, i as u64);
        let agent_idx = rng.gen_range(0..spec.agents.len());
        let costs = gen_agent_costs(&g, &spec.agents[agent_idx], &mut rng);
        let (source, target) = match spec.requirement_mode {
            RequirementMode::SingleSt => fixed_pair,
            RequirementMode::MultiSt => {
                let s = rng.gen_range(0..n);
                let mut t = rng.gen_range(0..n);
                while t == s {
                    t = rng.gen_range(0..n);
                }
                (g.nodes()[s].id, g.nodes()[t].id)
            }
        };
        let requirement = Requirement::SourceTarget { source, target };
        let solution = solve(SolverKind::Spp, &g, &costs, &requirement)?;
        let mut meta = serde_json::Map::new();
        meta.insert("agent".into(), serde_json::Value::from(agent_idx));
        records.push(DatasetRecord { solution, requirement, meta });
    }
    let dataset = Dataset { edge_count: g.edge_count(), records };
    Ok((g, dataset))
}

// ---------------------------------------------------------------------------
// Hidden-feature tour dataset
// ---------------------------------------------------------------------------

/// Complete undirected graph over uniform random positions.
pub fn gen_complete_graph(n_nodes: usize, seed: u64) -> Result<Graph, DataError> {
    if n_nodes < 3 {
        return Err(DataError::InvalidSpec("tours need at least 3 nodes".into()));
    }
    let mut rng = stream_rng(seed, StreamPurpose::DataGen, 0, 0);
    let nodes: Vec<NodePoint> = (0..n_nodes)
        .map(|i| NodePoint { id: i, x: rng.gen::<f64>(), y: rng.gen::<f64>() })
        .collect();
    let mut edges = Vec::new();
    for u in 0..n_nodes {
        for v in u + 1..n_nodes {
            edges.push((u, v));
        }
    }
    Ok(build_graph(nodes, edges, false)?)
}

/// Edge costs for a hidden feature vector `u`: Euclidean offset times
/// `1 + softplus(<w_e, u>) / softplus(0)` with per-edge weights drawn once.
pub fn tsp_edge_costs(g: &Graph, edge_weights: &[Vec<f64>], features: &[f64]) -> CostVector {
    let normalizer = softplus(0.0);
    let costs = (0..g.edge_count())
        .map(|e| {
            let a: f64 = edge_weights[e].iter().zip(features).map(|(w, u)| w * u).sum();
            g.edge_length(e) * (1.0 + softplus(a) / normalizer)
        })
        .collect();
    CostVector::new(costs).expect("finite costs")
}

/// Generate the tour dataset: hidden standard-normal features per sample map
/// through fixed random projections to edge costs; the solver records the
/// optimal (or 2-opt-local) tour. Hidden features are stored in metadata.
pub fn gen_tsp_dataset(spec: &TspCostSpec) -> Result<(Graph, Dataset), DataError> {
    if spec.n_features == 0 {
        return Err(DataError::InvalidSpec("need at least one hidden feature".into()));
    }
    if spec.n_samples == 0 {
        return Err(DataError::InvalidSpec("need at least one sample".into()));
    }
    let g = gen_complete_graph(spec.n_nodes, spec.seed)?;
    let mut rng = stream_rng(spec.seed, StreamPurpose::DataGen, 2, 0);
    let edge_weights: Vec<Vec<f64>> = (0..g.edge_count())
        .map(|_| {
            (0..spec.n_features)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let kind = if spec.n_nodes <= EXACT_TSP_NODE_LIMIT {
        SolverKind::TspExact
    } else {
        SolverKind::TspHeuristic
    };
    let mut records = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let mut srng = stream_rng(spec.seed, StreamPurpose::DataGen, 3, i as u64);
        let features: Vec<f64> = (0..spec.n_features)
            .map(|_| srng.sample::<f64, _>(StandardNormal))
            .collect();
        let costs = tsp_edge_costs(&g, &edge_weights, &features);
        let solution = solve(kind, &g, &costs, &Requirement::None)?;
        let mut meta = serde_json::Map::new();
        meta.insert(
            "features".into(),
            serde_json::Value::from(
                features.iter().map(|&f| serde_json::Value::from(f)).collect::<Vec<_>>(),
            ),
        );
        records.push(DatasetRecord { solution, requirement: Requirement::None, meta });
    }
    let dataset = Dataset { edge_count: g.edge_count(), records };
    Ok((g, dataset))
}

// ---------------------------------------------------------------------------
// Dataset file format (JSON lines)
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct RecordLine {
    edges: Vec<usize>,
    source: Option<usize>,
    target: Option<usize>,
    #[serde(default)]
    meta: serde_json::Map<String, serde_json::Value>,
}

pub fn dataset_to_jsonl(ds: &Dataset) -> String {
    let mut out = String::new();
    for r in &ds.records {
        let (source, target) = match r.requirement {
            Requirement::SourceTarget { source, target } => (Some(source), Some(target)),
            Requirement::None => (None, None),
        };
        let line = RecordLine {
            edges: r.solution.edge_ids(),
            source,
            target,
            meta: r.meta.clone(),
        };
        out.push_str(&serde_json::to_string(&line).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Parse and validate a dataset against its graph: edge ids must be in
/// range and every record must be feasible for its requirement.
pub fn dataset_from_jsonl(text: &str, g: &Graph) -> Result<Dataset, DataError> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: RecordLine = serde_json::from_str(raw)
            .map_err(|e| DataError::ParseError { line, reason: e.to_string() })?;
        for &e in &rec.edges {
            if e >= g.edge_count() {
                return Err(DataError::GraphMismatch {
                    line,
                    reason: format!("edge id {e} out of range for {} edges", g.edge_count()),
                });
            }
        }
        let requirement = match (rec.source, rec.target) {
            (Some(source), Some(target)) => Requirement::SourceTarget { source, target },
            (None, None) => Requirement::None,
            _ => {
                return Err(DataError::ParseError {
                    line,
                    reason: "source and target must both be present or both null".into(),
                })
            }
        };
        let solution = SolutionVector::from_edge_ids(g.edge_count(), &rec.edges)
            .map_err(|e| DataError::ParseError { line, reason: e.to_string() })?;
        let report = validate_solution(g, &solution, &requirement)?;
        if !report.feasible {
            return Err(DataError::InfeasibleRecord {
                line,
                reason: format!("{:?}", report.failure),
            });
        }
        records.push(DatasetRecord { solution, requirement, meta: rec.meta });
    }
    Ok(Dataset { edge_count: g.edge_count(), records })
}

pub fn save_dataset(path: &std::path::Path, ds: &Dataset) -> Result<(), DataError> {
    std::fs::write(path, dataset_to_jsonl(ds)).map_err(|e| DataError::Io(e.to_string()))
}

pub fn load_dataset(path: &std::path::Path, g: &Graph) -> Result<Dataset, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::Io(e.to_string()))?;
    dataset_from_jsonl(&text, g)
}
