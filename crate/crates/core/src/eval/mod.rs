//! nDCG@k evaluation and paired significance testing.

mod matrix;
mod ndcg;
pub mod special;
mod ttest;

pub use matrix::{run_label, significance_matrix, Correction, SignificanceMatrix};
pub use ndcg::{dcg, ndcg_at_k, EvalReport, DEFAULT_CUTOFF};
pub use ttest::{paired_ttest, paired_ttest_values, SigResult};
