//! Classification metrics: confusion matrices, per-class and macro
//! precision/recall/F1, top-1 accuracy, multi-seed aggregation and the
//! paired t-test used for method comparison.

mod student_t;

pub use student_t::{incomplete_beta, ln_gamma, student_t_cdf, two_sided_p};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts indexed `[true class][predicted class]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|c| self.counts[c][c]).sum()
    }
}

/// Tallies prediction pairs into a `C x C` matrix.
pub fn confusion(
    true_labels: &[usize],
    predicted: &[usize],
    num_classes: usize,
) -> Result<ConfusionMatrix> {
    if true_labels.len() != predicted.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} true labels vs {} predictions",
            true_labels.len(),
            predicted.len()
        )));
    }
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in true_labels.iter().zip(predicted) {
        if t >= num_classes || p >= num_classes {
            return Err(Error::UnknownClass(
                t.max(p).to_string(),
                format!("0..{num_classes}"),
            ));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        num_classes,
        counts,
    })
}

/// Per-class precision/recall/F1 with 0/0 cases reported as 0 and flagged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True when any of the three ratios was 0/0.
    pub undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassScores>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Top-1 accuracy in percent.
    pub top1: f64,
    pub n_samples: u64,
    /// Seed of the run that produced the predictions, for aggregation.
    pub seed: u64,
}

/// Derives the report from a confusion matrix.
pub fn report(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyInput("empty confusion matrix".into()));
    }
    let c = cm.num_classes;
    let mut per_class = Vec::with_capacity(c);
    for k in 0..c {
        let tp = cm.counts[k][k] as f64;
        let col: f64 = (0..c).map(|t| cm.counts[t][k] as f64).sum();
        let row: f64 = (0..c).map(|p| cm.counts[k][p] as f64).sum();
        let mut undefined = false;
        let mut ratio = |num: f64, den: f64| {
            if den == 0.0 {
                undefined = true;
                0.0
            } else {
                num / den
            }
        };
        let precision = ratio(tp, col);
        let recall = ratio(tp, row);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        per_class.push(ClassScores {
            precision,
            recall,
            f1,
            undefined,
        });
    }
    let mean = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / c as f64;
    Ok(MetricsReport {
        macro_precision: mean(|s| s.precision),
        macro_recall: mean(|s| s.recall),
        macro_f1: mean(|s| s.f1),
        top1: 100.0 * cm.trace() as f64 / total as f64,
        n_samples: total,
        seed: 0,
        per_class,
    })
}

/// Field-wise mean and sample standard deviation over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub mean: MetricsReport,
    pub sd: MetricsReport,
    pub num_reports: usize,
}

/// Aggregates per-seed reports: arithmetic mean and sample (n-1) standard
/// deviation per field. A single report aggregates to itself with sd 0.
pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregateReport> {
    let n = reports.len();
    if n == 0 {
        return Err(Error::EmptyInput("no reports to aggregate".into()));
    }
    let c = reports[0].per_class.len();
    if reports.iter().any(|r| r.per_class.len() != c) {
        return Err(Error::ShapeMismatch(
            "reports disagree on class count".into(),
        ));
    }

    let stat = |get: &dyn Fn(&MetricsReport) -> f64| -> (f64, f64) {
        let mean = reports.iter().map(get).sum::<f64>() / n as f64;
        let sd = if n < 2 {
            0.0
        } else {
            (reports
                .iter()
                .map(|r| (get(r) - mean).powi(2))
                .sum::<f64>()
                / (n - 1) as f64)
                .sqrt()
        };
        (mean, sd)
    };

    let mut mean_classes = Vec::with_capacity(c);
    let mut sd_classes = Vec::with_capacity(c);
    for k in 0..c {
        let (pm, ps) = stat(&|r: &MetricsReport| r.per_class[k].precision);
        let (rm, rs) = stat(&|r: &MetricsReport| r.per_class[k].recall);
        let (fm, fs) = stat(&|r: &MetricsReport| r.per_class[k].f1);
        let undefined = reports.iter().any(|r| r.per_class[k].undefined);
        mean_classes.push(ClassScores {
            precision: pm,
            recall: rm,
            f1: fm,
            undefined,
        });
        sd_classes.push(ClassScores {
            precision: ps,
            recall: rs,
            f1: fs,
            undefined,
        });
    }
    let (top1_m, top1_s) = stat(&|r: &MetricsReport| r.top1);
    let (mp_m, mp_s) = stat(&|r: &MetricsReport| r.macro_precision);
    let (mr_m, mr_s) = stat(&|r: &MetricsReport| r.macro_recall);
    let (mf_m, mf_s) = stat(&|r: &MetricsReport| r.macro_f1);
    let n_samples = reports.iter().map(|r| r.n_samples).sum::<u64>() / n as u64;

    Ok(AggregateReport {
        mean: MetricsReport {
            per_class: mean_classes,
            macro_precision: mp_m,
            macro_recall: mr_m,
            macro_f1: mf_m,
            top1: top1_m,
            n_samples,
            seed: 0,
        },
        sd: MetricsReport {
            per_class: sd_classes,
            macro_precision: mp_s,
            macro_recall: mr_s,
            macro_f1: mf_s,
            top1: top1_s,
            n_samples,
            seed: 0,
        },
        num_reports: n,
    })
}

/// Two-sided paired t-test result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    /// True when the paired differences had zero variance but nonzero mean
    /// (the infinite-t convention: p reported as 0).
    pub degenerate: bool,
}

/// Paired two-sided Student t-test over per-seed score pairs.
pub fn paired_t_test(accuracies_a: &[f64], accuracies_b: &[f64]) -> Result<TTestResult> {
    if accuracies_a.len() != accuracies_b.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} paired scores",
            accuracies_a.len(),
            accuracies_b.len()
        )));
    }
    let n = accuracies_a.len();
    if n < 2 {
        return Err(Error::EmptyInput("paired t-test needs n >= 2".into()));
    }
    let diffs: Vec<f64> = accuracies_a
        .iter()
        .zip(accuracies_b)
        .map(|(a, b)| a - b)
        .collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let dof = n - 1;
    if sd == 0.0 {
        return Ok(if mean == 0.0 {
            TTestResult {
                t_statistic: 0.0,
                degrees_of_freedom: dof,
                p_value: 1.0,
                degenerate: false,
            }
        } else {
            TTestResult {
                t_statistic: if mean > 0.0 {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                },
                degrees_of_freedom: dof,
                p_value: 0.0,
                degenerate: true,
            }
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    Ok(TTestResult {
        t_statistic: t,
        degrees_of_freedom: dof,
        p_value: two_sided_p(t, dof),
        degenerate: false,
    })
}
