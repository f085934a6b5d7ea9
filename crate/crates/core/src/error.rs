use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A parameter violates one of the model's stated conditions.
    #[error("parameter violation ({field}): {constraint}")]
    ParameterViolation { field: String, constraint: String },

    #[error("a constant rate `r` is required for this model")]
    MissingRate,

    #[error("this model carries a stochastic short rate; `r` must be omitted")]
    ExtraneousRate,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The square root defining κ has a negative radicand.
    #[error("complex kappa: radicand {radicand} < 0")]
    ComplexKappa { radicand: f64 },

    /// The eigenpair exists but the limit formula does not apply.
    #[error("closed form not applicable: {0}")]
    PropositionInapplicable(String),

    #[error("growth condition not met: {0}")]
    ConditionUnmet(String),

    #[error("grid point {0} lies outside the state space")]
    GridOutsideDomain(String),

    #[error("no stabilizing Riccati solution: {0}")]
    NoStabilizingSolution(String),

    #[error("ill-conditioned subspace basis (condition number {cond:.3e})")]
    IllConditioned { cond: f64 },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("matrix is not Hurwitz (max real part {max_real_part:.3e})")]
    NotHurwitz { max_real_part: f64 },

    #[error("growth rate is infinite on the whole search interval")]
    NoFiniteRegion,

    #[error("simulation scheme unstable: {0}")]
    SchemeUnstable(String),

    #[error("all simulated paths diverged")]
    AllPathsDiverged,

    #[error("invalid simulation config: {0}")]
    InvalidSimConfig(String),
}

impl Error {
    pub(crate) fn violation(field: &str, constraint: impl Into<String>) -> Self {
        Error::ParameterViolation {
            field: field.to_string(),
            constraint: constraint.into(),
        }
    }

    /// True for errors caused by the inputs rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::ParameterViolation { .. }
                | Error::MissingRate
                | Error::ExtraneousRate
                | Error::InvalidConfig(_)
                | Error::InvalidSimConfig(_)
                | Error::GridOutsideDomain(_)
        )
    }
}
