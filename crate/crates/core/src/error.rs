use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("orientation constraint mismatch: {0}")]
    Constraint(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("source at radius {radius_mm:.3} mm lies outside the admissible domain (< {limit_mm:.3} mm)")]
    SourceOutOfDomain { radius_mm: f64, limit_mm: f64 },

    #[error("series truncated at order {order} with relative tail {tail:e}")]
    SeriesTruncation { order: usize, tail: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("hyperparameter error: {0}")]
    Hyperparameter(String),

    #[error("no sign change on [{lo}, {hi}]")]
    RootBracket { lo: f64, hi: f64 },

    #[error("level size error: {0}")]
    LevelSize(String),

    #[error("region of interest contains no source positions")]
    EmptyRoi,

    #[error("zero mass: {0}")]
    ZeroMass(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
