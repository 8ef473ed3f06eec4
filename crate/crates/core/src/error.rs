/// Errors shared by the continuation kernels.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("unknown problem id `{0}`")]
    UnknownProblem(String),

    /// A residual or Jacobian evaluation produced a non-finite entry.
    #[error("non-finite value in {what} at entry {index}")]
    NonFinite { what: &'static str, index: usize },

    /// Evaluation left the domain of the problem (e.g. exp overflow,
    /// fractional power of a negative parameter).
    #[error("evaluation outside problem domain: {0}")]
    Domain(String),

    /// The stacked bordered matrix is singular or too ill-conditioned to
    /// trust the solve.
    #[error("singular or ill-conditioned bordered system")]
    SingularSystem,

    /// No reliable nullspace vector could be extracted from the Jacobian.
    #[error("rank-deficient Jacobian: no unique tangent")]
    RankDeficient,

    /// Newton iteration at fixed lambda did not converge.
    #[error("Newton did not converge within {iterations} iterations")]
    NewtonDidNotConverge { iterations: usize },

    /// A deflated residual was requested at (numerically) a deflated root.
    #[error("deflation operator singular: point coincides with a found solution")]
    SingularDeflation,

    /// Parameter validation failed.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
