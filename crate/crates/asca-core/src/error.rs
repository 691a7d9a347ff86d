//! Error type shared by every module in the crate.

use thiserror::Error;

/// Everything that can go wrong while building tensors, coding designs,
/// fitting, or computing diagnostics. Variants carry enough context to
/// point at the offending mode, factor, or cell.
#[derive(Debug, Error)]
pub enum AscaError {
    // tensor construction
    #[error("more than one record maps to cell {cell:?} (record at {timestamp})")]
    DuplicateCell { cell: Vec<usize>, timestamp: String },
    #[error("timestamp {timestamp} does not map into mode '{mode}' (level {level} of {cardinality})")]
    UnmappableTimestamp {
        timestamp: String,
        mode: String,
        level: i64,
        cardinality: usize,
    },
    #[error("series '{0}' is not a declared level of the series mode")]
    UnknownSeries(String),
    #[error("no mode named '{0}'")]
    UnknownMode(String),
    #[error("mode '{0}' is declared more than once")]
    DuplicateMode(String),
    #[error("more than one evolution mode declared ('{0}' and '{1}')")]
    MultipleEvolutionModes(String, String),
    #[error("mode '{name}': declared cardinality {declared} does not match {expected} derived from frequency and period")]
    CardinalityMismatch {
        name: String,
        declared: usize,
        expected: usize,
    },
    #[error("mode '{0}' needs a series column but none was mapped")]
    MissingSeriesMode(String),

    // unfolding
    #[error("evolution mode '{0}' must be assigned to rows, not columns")]
    EvolutionModeInColumns(String),
    #[error("at least one mode must be assigned to columns")]
    EmptyColumnModes,
    #[error("mode '{0}' is missing from the row/column partition")]
    ModeNotInPartition(String),

    // aggregation
    #[error("block size {block} exceeds cardinality {cardinality} of mode '{mode}'")]
    BlockTooLarge {
        mode: String,
        block: usize,
        cardinality: usize,
    },
    #[error("block size {block} does not divide cardinality {cardinality} of mode '{mode}' and remainder absorption is off")]
    BlockDoesNotDivide {
        mode: String,
        block: usize,
        cardinality: usize,
    },
    #[error("block size must be at least 1")]
    ZeroBlock,

    // design coding
    #[error("factor '{0}' has fewer than two observed levels")]
    DegenerateFactor(String),
    #[error("factor '{factor}': level {level} is outside 0..{n_levels}")]
    LevelOutOfRange {
        factor: String,
        level: usize,
        n_levels: usize,
    },
    #[error("{0}")]
    ShapeMismatch(String),
    #[error("factor '{inner}' is not properly nested in '{outer}': inner level {level} appears under more than one outer level")]
    NotProperlyNested {
        outer: String,
        inner: String,
        level: usize,
    },
    #[error("interaction between '{0}' and '{1}' is not allowed: the pair is in a nesting relationship")]
    InteractionWithNestedPair(String, String),
    #[error("factor name '{0}' is declared more than once")]
    DuplicateFactorName(String),

    // factorization and inference
    #[error("input matrix contains non-finite entries; impute or drop missing cells first")]
    NonFiniteInput,
    #[error("residual degrees of freedom are zero; the design saturates the data")]
    NoResidualDf,
    #[error("no term named '{0}' in the design")]
    UnknownTerm(String),
    #[error("permutation count must be at least 1")]
    ZeroPermutations,

    // component analysis
    #[error("requested {requested} components but the matrix admits at most {max}")]
    TooManyComponents { requested: usize, max: usize },
    #[error("component index {index} is outside the fitted {fitted} components")]
    ComponentOutOfRange { index: usize, fitted: usize },

    // preprocessing
    #[error("column {0} has no observed values; it cannot be imputed")]
    EmptyColumn(usize),
    #[error("row exclusion removed every row")]
    AllRowsDropped,

    // diagnostics
    #[error("series is empty")]
    EmptyInput,
    #[error("series is constant; autocorrelation is undefined")]
    ConstantSeries,
    #[error("series of length {n} is too short for lag {lag}")]
    SeriesTooShort { n: usize, lag: usize },
    #[error("percentile {0} is outside [0, 100]")]
    PercentileOutOfRange(f64),

    // input parsing
    #[error("input line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}
