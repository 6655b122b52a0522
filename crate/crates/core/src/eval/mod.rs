//! Evaluation metrics: feature-space distances, retrieval, goal success and
//! text overlap, each reported with a bootstrap 95% half-width.

mod distance;
mod features;
mod fid;
mod goal;
mod report;
mod stats;
pub mod suite;
mod text;

pub use distance::{diversity, mm_dist, multimodality, multimodality_of_groups, r_precision, RPrecision, R_PRECISION_POOL};
pub use features::{FeatureConfig, FeatureExtractor, FeatureLog};
pub use fid::{covariance, fid, fid_report, mean_vector};
pub use goal::{random_code_rollout, success_rate, SuccessReport};
pub use report::{write_reports, MetricReport};
pub use stats::{bootstrap_ci, euclidean, mean};
pub use text::{bleu, rouge_l, tokenize_words};
