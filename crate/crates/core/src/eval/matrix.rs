use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use crate::corpus::{QrelSet, Run};
use crate::error::{Error, Result};
use crate::scalar::Score;

use super::ndcg::ndcg_at_k;
use super::ttest::{paired_ttest, SigResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Correction {
    None,
    #[default]
    Bonferroni,
}

impl fmt::Display for Correction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Correction::None => "none",
            Correction::Bonferroni => "bonferroni",
        })
    }
}

impl std::str::FromStr for Correction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Correction::None),
            "bonferroni" => Ok(Correction::Bonferroni),
            other => Err(Error::invalid(format!("unknown correction `{other}`"))),
        }
    }
}

/// Pairwise significance of mean nDCG@k differences between runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceMatrix {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub k: usize,
    pub alpha_level: f64,
    pub correction: Correction,
    /// `tests[x][y]` compares run x against run y; `None` on the diagonal.
    pub tests: Vec<Vec<Option<SigResult>>>,
    /// `marks[x]` lists every y that x beats significantly.
    pub marks: Vec<Vec<usize>>,
}

/// Row label: `a`..`z`, then `r26`, `r27`, ...
pub fn run_label(i: usize) -> String {
    if i < 26 {
        char::from(b'a' + i as u8).to_string()
    } else {
        format!("r{i}")
    }
}

pub fn significance_matrix<S: Score>(
    runs: &[(String, Run<S>)],
    qrels: &QrelSet,
    k: usize,
    alpha_level: f64,
    correction: Correction,
) -> Result<SignificanceMatrix> {
    if runs.len() < 2 {
        return Err(Error::invalid(
            "significance testing needs at least two runs",
        ));
    }
    if !(0.0..=1.0).contains(&alpha_level) {
        return Err(Error::invalid(format!(
            "alpha level must lie in [0, 1], got {alpha_level}"
        )));
    }
    let mut per_query: Vec<BTreeMap<String, f64>> = Vec::with_capacity(runs.len());
    let mut means = Vec::with_capacity(runs.len());
    for (_, run) in runs {
        let report = ndcg_at_k(run, qrels, k)?;
        means.push(report.mean.as_f64());
        per_query.push(
            report
                .per_query
                .into_iter()
                .map(|(q, v)| (q, v.as_f64()))
                .collect(),
        );
    }
    let m = runs.len();
    let comparisons = m - 1;
    let mut tests = vec![vec![None; m]; m];
    let mut marks = vec![Vec::new(); m];
    for x in 0..m {
        for y in 0..m {
            if x == y {
                continue;
            }
            let mut result = paired_ttest(&per_query[x], &per_query[y])?;
            if correction == Correction::Bonferroni {
                result = result.bonferroni(comparisons);
            }
            if means[x] > means[y] && result.corrected_p <= alpha_level {
                marks[x].push(y);
            }
            tests[x][y] = Some(result);
        }
    }
    Ok(SignificanceMatrix {
        names: runs.iter().map(|(n, _)| n.clone()).collect(),
        means,
        k,
        alpha_level,
        correction,
        tests,
        marks,
    })
}

impl SignificanceMatrix {
    /// Plain-text table: one row per run with its mean and the labels of the
    /// runs it significantly outperforms, then the pairwise test details.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let w = |out: &mut String, args: fmt::Arguments<'_>| {
            out.write_fmt(args).expect("writing to String")
        };
        w(
            &mut out,
            format_args!(
                "# paired two-tailed t-test, correction={}, p <= {}, metric=ndcg@{}\n",
                self.correction, self.alpha_level, self.k
            ),
        );
        let name_width = self.names.iter().map(String::len).max().unwrap_or(0).max(5);
        w(
            &mut out,
            format_args!("#   {:<name_width$}  ndcg@{}\n", "model", self.k),
        );
        for (i, name) in self.names.iter().enumerate() {
            let sup: String = self.marks[i].iter().map(|&j| run_label(j)).collect();
            let sup = if sup.is_empty() {
                String::new()
            } else {
                format!("^{sup}")
            };
            w(
                &mut out,
                format_args!(
                    "{:<3} {name:<name_width$}  {:.4}{sup}\n",
                    run_label(i),
                    self.means[i]
                ),
            );
        }
        w(
            &mut out,
            format_args!("\n# pairwise\nx\ty\tn\tt\tp\tp_corrected\n"),
        );
        for (x, row) in self.tests.iter().enumerate() {
            for (y, cell) in row.iter().enumerate() {
                if let Some(r) = cell {
                    w(
                        &mut out,
                        format_args!(
                            "{}\t{}\t{}\t{:.6}\t{:.6e}\t{:.6e}\n",
                            run_label(x),
                            run_label(y),
                            r.n,
                            r.t_statistic,
                            r.p_value,
                            r.corrected_p
                        ),
                    );
                }
            }
        }
        out
    }
}
