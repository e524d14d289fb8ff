use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("confidence {0} is outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("sample_id must not be empty")]
    EmptySampleId,
    #[error("model `{name}`: macs_per_sample must be > 0, got {macs}")]
    NonPositiveMacs { name: String, macs: f64 },
    #[error("duplicate sample_id `{0}`")]
    DuplicateSampleId(String),
    #[error("alignment needs at least 2 record sets, got {0}")]
    TooFewSets(usize),
    #[error("record sets disagree on dataset: `{expected}` vs `{found}`")]
    DatasetMismatch { expected: String, found: String },
    #[error("sample_id `{sample_id}` is missing from the records of model `{model}`")]
    MissingSample { sample_id: String, model: String },
    #[error("sample_id `{sample_id}`: true_label {first} (model `{first_model}`) conflicts with {second} (model `{second_model}`)")]
    LabelConflict {
        sample_id: String,
        first: u32,
        first_model: String,
        second: u32,
        second_model: String,
    },
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("record set is empty")]
    EmptyRecords,
    #[error("n_bins must be >= 1")]
    ZeroBins,
    #[error("expected {expected} models, got {found}")]
    ModelCount { expected: usize, found: usize },
    #[error("cascade chain needs at least 2 models, got {0}")]
    ChainTooShort(usize),
    #[error("chain of {chain} models needs {expected} thresholds, got {found}")]
    ThresholdCount {
        chain: usize,
        expected: usize,
        found: usize,
    },
    #[error("threshold {0} is outside [0, 1]")]
    ThresholdOutOfRange(f64),
    #[error("chain position {position}: config has `{config}`, records have `{records}`")]
    ChainMismatch {
        position: usize,
        config: String,
        records: String,
    },
    #[error("threshold grid is empty")]
    EmptyGrid,
    #[error("threshold grid is not sorted ascending at index {0}")]
    UnsortedGrid(usize),
    #[error("scaling ratio `{name}` must be > 0, got {value}")]
    NonPositiveRatio { name: &'static str, value: f64 },
    #[error("tradeoff curve is empty")]
    EmptyCurve,
    #[error("no points to compare")]
    NoPoints,
    #[error("quantile {0} is outside [0, 1]")]
    QuantileOutOfRange(f64),
    #[error("tolerance must be finite, got {0}")]
    NonFiniteTolerance(f64),
}
