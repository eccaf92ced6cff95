use thiserror::Error;

/// Failures of the numerical kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericError {
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },
    #[error(
        "quadrature did not converge after {subdivisions} subdivisions \
         (value {value:e}, error estimate {error_estimate:e})"
    )]
    QuadratureDiverged {
        value: f64,
        error_estimate: f64,
        subdivisions: usize,
    },
    #[error("root is not bracketed by [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },
}

/// Errors raised by link-budget and decoding-error computations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinkError {
    #[error("link budget field `{field}` must be strictly positive and finite, got {value}")]
    InvalidBudget { field: &'static str, value: f64 },
    #[error("code configuration needs positive payload and packet length (b = {payload_bits}, l_p = {packet_len})")]
    InvalidCode { payload_bits: f64, packet_len: f64 },
    #[error("SNR must be non-negative, got {0}")]
    NegativeSnr(f64),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarqError {
    #[error("attempt count {r} outside 1..={max}")]
    AttemptOutOfRange { r: usize, max: usize },
    #[error("maximum attempts must be at least 1")]
    NoAttempts,
    #[error("SH delay diverges: Theta(N) = {theta_n} (a full HARQ trial never succeeds)")]
    Divergent { theta_n: f64 },
    #[error("invalid HARQ error profile: {0}")]
    InvalidProfile(String),
    #[error(transparent)]
    Link(#[from] LinkError),
}

/// Errors from the human-lag Markov model.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid lag chain: {0}")]
    InvalidChain(String),
    #[error("lag chain is reducible; states {unreachable:?} cannot be reached from state {from}")]
    Reducible { from: u32, unreachable: Vec<u32> },
    #[error("need at least two observations to estimate transitions, got {len}")]
    InsufficientData { len: usize },
    #[error("observed lag state {0} is not in the declared state set")]
    UnknownState(u32),
    #[error("raw lag must be non-negative, got {0} s")]
    NegativeLag(f64),
    #[error("state set must be non-empty with distinct positive values")]
    BadStateSet,
    #[error("lag-sum table truncated: k_max = {k_max} keeps only {kept_mass} of the mass for m = {m}")]
    Truncation { m: usize, k_max: usize, kept_mass: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CycleError {
    #[error("open human-loop probability {p_h} must lie in [0, 1) for the cycle length to be finite")]
    Divergent { p_h: f64 },
    #[error("truncation tail {achieved:e} exceeds the target {target:e}")]
    Truncation { achieved: f64, target: f64 },
    #[error("loop count must be at least 1")]
    ZeroLoops,
    #[error(transparent)]
    Harq(#[from] HarqError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilityError {
    #[error("invalid Lyapunov gains: {0}")]
    InvalidGains(String),
    #[error("open-loop probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error(
        "power moment at base {base} is tail dominated (truncation error {error:e}); \
         rebuild the interval distribution with a smaller tail"
    )]
    Truncation { base: f64, error: f64 },
    #[error("no boundary root: {0}")]
    NoRoot(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Cycle(#[from] CycleError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("singular dynamics: determinant {0} is not positive")]
    Singular(f64),
    #[error("non-finite plant state")]
    NonFinite,
    #[error("invalid plant parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("no closed human loop within {steps} steps")]
    Starvation { steps: u64 },
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimationError {
    #[error("no usable samples (V > 0) for {case}")]
    InsufficientData { case: &'static str },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("empty log")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

/// Crate-wide error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Harq(#[from] HarqError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cycle(#[from] CycleError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
