//! Learning a latent space of solver cost functions from observed graph
//! solutions: graph and solution types, shortest-path and tour solvers,
//! a small dense-network stack, the latent-variable model and its baselines,
//! post-training inference tasks, metrics and synthetic data generators.

pub mod datagen;
pub mod eval;
pub mod graph;
pub mod inference;
pub mod model;
pub mod neural;
pub mod seeding;
pub mod solvers;

pub use graph::{
    build_graph, edge_usage, validate_solution, Graph, GraphError, Infeasibility, NodePoint,
    Requirement, SolutionVector, ValidationReport,
};
pub use solvers::{brute_force, solve, solve_perturbed, CostVector, SolverError, SolverKind};
