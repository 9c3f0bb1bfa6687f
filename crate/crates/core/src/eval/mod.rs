//! Retrieval evaluation, control tasks and cross-model statistics.

mod neighbors;
mod retrieval;
mod stats;

pub use neighbors::{neighbor_table, Neighbor, NeighborRow, NeighborTable};
pub use retrieval::{
    accuracy_at_k, control_permutation, evaluate_scorer, invert_permutation, permuted_control,
    rank_of, retrieve_topk, top_k, ClassAccuracy, ClassScorer, EvalReport, ProbeIndex,
    RetrievalSet,
};
pub use stats::{
    aggregate_runs, correlation_matrix, fractional_ranks, mean_sem, spearman_rho,
    CorrelationMatrix, MeanSem, RunAccuracies,
};

/// Accuracy cut-offs reported by default.
pub const DEFAULT_KS: [usize; 2] = [1, 3];
