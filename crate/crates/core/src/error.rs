use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A parameter is outside its admissible domain.
    #[error("parameter `{name}` out of range: {value} ({expected})")]
    OutOfRange {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    /// A closed form divides by the contact rate and the rate is zero.
    #[error("contact rate must be positive for {0}")]
    DegenerateRate(&'static str),

    /// Relays never reach the destination (q_tau = 1).
    #[error("relay failure probability is 1; no relay can ever deliver")]
    DegenerateFailure,

    /// The effective per-relay success probability (1 - q_tau) p_c is zero.
    #[error("effective per-relay success probability is zero")]
    DegenerateContact,

    #[error("cohort must contain at least one relay")]
    EmptyCohort,

    #[error("cohort of {0} relays is too large for exact summation")]
    CohortTooLarge(u32),

    #[error("strategy profile inconsistent: {0}")]
    InconsistentProfile(String),

    #[error("invalid range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("equilibrium infeasible: {0}")]
    Infeasible(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("config key `{key}`: {message}")]
    ConfigValue { key: String, message: String },

    #[error("scenario `{mode}`: {source}")]
    Scenario {
        mode: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
}

pub(crate) fn check_range(
    name: &'static str,
    value: f64,
    ok: bool,
    expected: &'static str,
) -> Result<()> {
    if ok && !value.is_nan() {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name,
            value,
            expected,
        })
    }
}
