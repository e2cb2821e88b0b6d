//! Measurement: precision/recall/F1 on majority and individual labels,
//! uncertainty correlations, outcome buckets, the mismatch taxonomy and the
//! cross-validation harness.

mod analysis;
mod harness;
mod metrics;
mod text;

pub use analysis::{
    error_buckets, mismatch_analysis, Distribution, ErrorBuckets, MismatchCategory, MismatchInput,
    MismatchReport,
};
pub use harness::*;
pub use metrics::{
    individual_label_eval, individual_label_scores, majority_vs_annotations, pairwise_correlation,
    pearson, prf, CorrelationMatrix, IndividualEval, Prf,
};
pub use text::Table;
