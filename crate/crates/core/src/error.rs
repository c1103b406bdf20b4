use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("walk recurrent in d = {0}, R_∞ divergent")]
    Recurrent(usize),

    #[error("kernel table radius {radius} < n_max {n_max}: enable truncation to accept a lossy table")]
    LossyKernel { radius: i64, n_max: usize },

    #[error("quadrature did not converge: achieved error estimate {achieved:e} > tolerance {tolerance:e}")]
    Quadrature { achieved: f64, tolerance: f64 },

    #[error("truncation leak bound {bound:e} exceeds threshold {threshold:e}; increase padding")]
    Leak { bound: f64, threshold: f64 },

    #[error("β = {beta} is not below β_L2 = {beta_l2}: limit variance is infinite")]
    Supercritical { beta: f64, beta_l2: f64 },

    #[error("oracle budget exceeded: {required} path tuples requested, budget {budget}")]
    Budget { required: u128, budget: u128 },

    #[error("replica {replica}: {source}")]
    Replica {
        replica: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("no samples: {0}")]
    NoSamples(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
