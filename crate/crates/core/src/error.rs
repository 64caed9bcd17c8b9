use thiserror::Error;

/// Errors produced by the density calculus and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown density family `{0}`")]
    UnknownFamily(String),

    #[error("invalid parameters for family `{family}`: {reason}")]
    InvalidParams { family: String, reason: String },

    #[error("grid too small for the family's tails: truncated mass {deficit:.3e} exceeds 1e-8")]
    GridTooSmall { deficit: f64 },

    #[error("density is identically zero; cannot normalize")]
    AllZero,

    #[error("degenerate density: variance {variance:.3e} below 1e-12")]
    DegenerateVariance { variance: f64 },

    #[error("grids are incompatible and cannot be aligned by resampling: {0}")]
    IncompatibleGrids(String),

    #[error("interval [{a}, {b}] lies outside the frequency grid")]
    IntervalOutsideGrid { a: f64, b: f64 },

    #[error(
        "cramer constant may be attained beyond the grid: |f| at the grid edge ({edge:.3e}) \
         is not dominated by the interior supremum ({interior:.3e})"
    )]
    EdgeDominance { edge: f64, interior: f64 },

    #[error("block count {n_blocks} exceeds the number of summands {n}")]
    TooManyBlocks { n_blocks: usize, n: usize },

    #[error("block {index} is empty (a single summand variance exceeds the block budget)")]
    EmptyBlock { index: usize },

    #[error("block count {n_blocks} must exceed the split order {m0}")]
    BlockCountTooSmall { n_blocks: usize, m0: usize },

    #[error("convolution clamped negative mass {clamped:.3e}, above the 1e-10 budget")]
    ClampBudgetExceeded { clamped: f64 },

    #[error("convolution support overflows the grid window: lost mass {lost:.3e}")]
    SupportOverflow { lost: f64 },

    #[error("sum variance drifted to {variance} (|drift| > {tol:.0e})")]
    VarianceDrift { variance: f64, tol: f64 },

    #[error("weights must square-sum to 1, got {sum_sq}")]
    BadWeights { sum_sq: f64 },

    #[error("no positive constant makes the envelope dominate the measured curve")]
    NoValidConstant,

    #[error("density bound M*sigma = {m_sigma:.6} is below the universal minimum 1/sqrt(12)")]
    ImpossibleDensityBound { m_sigma: f64 },

    #[error("scan failed at n = {n}: {source}")]
    ScanFailure {
        n: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("grid file format: {0}")]
    GridFileFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
