//! Confusion metrics, AUROC, review-area stratification and the
//! human/model complementarity analysis.

mod metrics;
mod readers;
mod regions;
mod report;
mod stratified;

pub use metrics::{auroc, confusion, f1_from, prf1, ConfusionCounts, Prf1};
pub use readers::{
    format_reader_file, load_reader_file, parse_reader_text, reader_compare, CategoryRow, Correct, ReaderRecord,
    ReaderReport,
};
pub use regions::{region_of, Region, RegionDetail, RegionRule};
pub use report::{parse_kv, regions_kv, regions_text, AttentionCheck, EvalItem, EvalReport};
pub use stratified::{stratified_accuracy, AccuracyRow, ScoredSample, StratifiedTable};

/// The 25-image human/model reader set: 12 pneumonia, 8 other-disease and
/// 5 normal images with the radiologist's and the model's calls.
pub const READER_FIXTURE: &str = include_str!("../../fixtures/readers.tsv");
