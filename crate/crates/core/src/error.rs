use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A cable projection left the admissible disc `||r|| <= l - z_guard`.
    #[error("cable {cable} guard violated: |r| = {norm:.6} exceeds {limit:.6}")]
    GuardViolation { cable: usize, norm: f64, limit: f64 },
    #[error("linear solve failed: {0}")]
    SolveFailure(&'static str),
    #[error("formation infeasible: {0}")]
    FormationInfeasible(String),
    #[error("matrix is rank deficient (rank {rank} < {expected})")]
    RankDeficient { rank: usize, expected: usize },
    #[error("cable vector has zero length")]
    ZeroCable,
    #[error("disturbance allocation matrix is singular (|det| = {det:.3e})")]
    AllocationSingular { det: f64 },
    #[error("commanded lift is degenerate: {0}")]
    DegenerateForce(&'static str),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },
    #[error("log is empty")]
    EmptyLog,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
