use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid array geometry: {0}")]
    Geometry(String),

    #[error("invalid field of view [{start}, {end}] deg: need -90 < start < end < 90")]
    FieldOfView { start: f64, end: f64 },

    #[error("angle {0} deg is at or beyond end-fire (|angle| must stay below 89.94 deg)")]
    EndFire(f64),

    #[error("weight vector has {got} entries, array has {expected} elements")]
    WeightLength { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("need at least {needed} beams, got {got}")]
    TooFewBeams { needed: usize, got: usize },

    #[error("invalid window: {0}")]
    Window(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("frame {frame} has no usable stage (sensing duration shorter than one CPI)")]
    NoStages { frame: usize },

    #[error("target at {range_m} m does not fit in the PRI window (max {max_m:.1} m)")]
    RangeOutOfWindow { range_m: f64, max_m: f64 },

    #[error("data cube shape mismatch: {0}")]
    Shape(String),

    #[error("fast-time bin {0} not present in the data cube")]
    MissingBin(usize),

    #[error("covariance matrix at range bin {range_bin} is singular")]
    SingularCovariance { range_bin: usize },

    #[error("unknown study id `{0}`")]
    UnknownStudy(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
