use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::special::student_t_two_tailed;

/// Outcome of a paired two-tailed t-test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigResult {
    pub t_statistic: f64,
    pub p_value: f64,
    pub df: usize,
    /// p-value after multiple-comparison correction; equals `p_value` until corrected.
    pub corrected_p: f64,
    /// Number of paired observations.
    pub n: usize,
    /// All differences identical and nonzero: t is infinite and p is 0.
    pub degenerate: bool,
}

impl SigResult {
    /// Bonferroni correction over `comparisons` tests, capped at 1.
    pub fn bonferroni(mut self, comparisons: usize) -> Self {
        self.corrected_p = (self.p_value * comparisons.max(1) as f64).min(1.0);
        self
    }
}

/// Paired t-test over two equally long value slices (`a[i]` pairs with `b[i]`).
pub fn paired_ttest_values(a: &[f64], b: &[f64]) -> Result<SigResult> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "paired t-test needs at least 2 pairs, got {n}"
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    let df = n - 1;
    let (t, p, degenerate) = if sd == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0, false)
        } else {
            (f64::INFINITY.copysign(mean), 0.0, true)
        }
    } else {
        let t = mean / (sd / nf.sqrt());
        (t, student_t_two_tailed(t, df as f64), false)
    };
    Ok(SigResult {
        t_statistic: t,
        p_value: p,
        df,
        corrected_p: p,
        n,
        degenerate,
    })
}

/// Paired t-test over the queries both maps share.
pub fn paired_ttest(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> Result<SigResult> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = a
        .iter()
        .filter_map(|(q, x)| b.get(q).map(|y| (*x, *y)))
        .unzip();
    if xs.len() < 2 {
        return Err(Error::invalid(format!(
            "paired t-test needs at least 2 shared queries, got {}",
            xs.len()
        )));
    }
    paired_ttest_values(&xs, &ys)
}
