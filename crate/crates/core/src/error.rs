use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate basis: channels are parallel (residual {residual:e})")]
    DegenerateBasis { residual: f64 },

    #[error("unsupported modulation order {0} (square QAM 4, 16 or 64 expected)")]
    UnsupportedModulation(u32),

    #[error("unvalidated modulation pair M1={m1}, M2={m2} for the {user} expression")]
    UnvalidatedModulation { m1: u32, m2: u32, user: &'static str },

    #[error("probability {value:e} outside [0, 1] beyond rounding tolerance")]
    ProbabilityOutOfRange { value: f64 },

    #[error("beamformer has a component outside span{{u1, u2}} of norm {0:e}")]
    OutOfSpan(f64),

    #[error("received decision statistic at U2 is not phase aligned; analytic BER does not apply")]
    NotAligned,

    #[error("repair did not converge within {0} iterations")]
    RepairFailure(usize),

    #[error("no feasible solution across {0} starts")]
    NoFeasibleSolution(usize),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("missing model")]
    MissingModel,

    #[error("k = {k} exceeds sample count {n}")]
    TooManyClusters { k: usize, n: usize },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
