use thiserror::Error;

/// Errors produced by the estimation toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A value lies outside the domain of the operation (non-positive
    /// propensity, rank out of range, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A JSONL line could not be decoded.
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },

    /// A JSONL line decoded but violates a record invariant.
    #[error("line {line}: invalid record: {message}")]
    Validation { line: usize, message: String },

    /// Input violates the contract of the operation (for instance a pair with
    /// several clicks handed to the conditional likelihood).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Nothing to estimate from.
    #[error("no data: {0}")]
    NoData(String),

    /// The rank co-occurrence graph splits into several components, so the
    /// propensity ratios between components are not identifiable.
    #[error("propensities not identifiable: rank co-occurrence graph has {} components ({})", components.len(), describe_components(components))]
    Disconnected { components: Vec<Vec<u32>> },

    /// Ratio of zero clicks-per-impression.
    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    /// AUC needs both classes at the evaluated rank.
    #[error("rank {rank}: AUC undefined, only one class present")]
    SingleClass { rank: u32 },

    /// A required model score is missing.
    #[error("missing score for model `{model}` at line {line}")]
    MissingScore { model: String, line: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

fn describe_components(components: &[Vec<u32>]) -> String {
    components
        .iter()
        .map(|c| {
            let shown: Vec<String> = c.iter().take(8).map(|r| r.to_string()).collect();
            if c.len() > 8 {
                format!("{{{}, ... {} ranks}}", shown.join(", "), c.len())
            } else {
                format!("{{{}}}", shown.join(", "))
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}
