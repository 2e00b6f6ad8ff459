//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported degree for {what}: {got}")]
    UnsupportedDegree { what: &'static str, got: usize },
    #[error("closest-point projection did not converge (p = {0:?})")]
    ClosestPointDiverged([f64; 3]),
    #[error("operands live on different meshes")]
    MeshMismatch,
    #[error("local Regge DOF system is singular on element {elem}")]
    SingularLocalSolve { elem: usize },
    #[error("edge {0} has fewer than two incident triangles")]
    BoundaryEdge(usize),
    #[error("reference field has rank-deficient gradients on element {elem}")]
    DegenerateReference { elem: usize },
    #[error("saddle-point factorization failed: {0}")]
    SingularSystem(String),
    #[error("rigid-motion Gram matrix is singular")]
    GramSingular,
    #[error("time {t} outside the source validity interval [0, {t_max}]")]
    OutOfInterval { t: f64, t_max: f64 },
    #[error("axisymmetric profile degenerate: {0}")]
    DegenerateProfile(String),
    #[error("Gaussian curvature became non-positive at t = {t} (min {kappa_min})")]
    CurvatureNegative { t: f64, kappa_min: f64 },
    #[error("Ricci flow step unstable at t = {t}: {detail}")]
    StepUnstable { t: f64, detail: String },
    #[error("invalid time step: {0}")]
    InvalidStep(f64),
    #[error("metric not positive definite on element {elem} (min eigenvalue {eig})")]
    MetricNotPositive { elem: usize, eig: f64 },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
