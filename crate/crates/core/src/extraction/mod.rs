//! Training-data extraction: sample candidate suffixes for each prefix, rank
//! them with a membership score, and measure how much of the true training
//! data was recovered.

mod decoding;
mod pipeline;

pub use decoding::{filtered_distribution, sample_next, DecodingParams, Filtered};
pub use pipeline::{
    any_match, any_match_accuracy, exact_match, exact_match_accuracy, extraction_auc,
    generate_candidates, global_ranking, rank_candidates, rank_candidates_with, read_benchmark,
    recall_at_k_errors, results_csv, summarize, token_level, token_level_accuracy, write_benchmark,
    Candidate, CandidateSet, ExtractionSummary, MatchCount, PrefixCandidates, PrefixSuffixPair,
    RankingAttack,
};
