//! Classification metrics: confusion matrix, balanced accuracy, Cohen kappa,
//! weighted F1, per-class precision/recall/F1 and PR-AUC (average precision).
//!
//! Division-by-zero policy: zero-support classes are excluded from balanced accuracy
//! and carry weight 0 in weighted F1; precision with no predictions and F1 with
//! precision + recall = 0 are both 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Builds a matrix from row-major nested counts.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Metric("confusion matrix must be square".into()));
        }
        Ok(Self {
            classes: c,
            counts: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Number of samples whose true class is `c`.
    pub fn support(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.get(c, p)).sum()
    }

    /// Number of samples predicted as `c`.
    pub fn predicted(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, c)).sum()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.classes);
        for i in 0..self.classes {
            for j in 0..self.classes {
                t.counts[j * self.classes + i] = self.get(i, j);
            }
        }
        t
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect()
    }
}

pub fn confusion(truth: &[u32], pred: &[u32], classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::Metric(format!(
            "label length mismatch: {} true vs {} predicted",
            truth.len(),
            pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(classes);
    for (i, (&t, &p)) in truth.iter().zip(pred).enumerate() {
        if t as usize >= classes || p as usize >= classes {
            return Err(Error::Metric(format!(
                "label out of range at index {i}: true {t}, predicted {p}, classes {classes}"
            )));
        }
        cm.counts[t as usize * classes + p as usize] += 1;
    }
    Ok(cm)
}

/// Mean recall over classes with nonzero support.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for c in 0..cm.classes {
        let support = cm.support(c);
        if support > 0 {
            sum += cm.get(c, c) as f64 / support as f64;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Metric("balanced accuracy: every class is empty".into()));
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaScore {
    pub value: f64,
    /// Expected agreement was 1 (a single class on both sides); value is then defined as 0.
    pub degenerate: bool,
}

/// `(p_o - p_e) / (1 - p_e)`.
pub fn cohen_kappa(cm: &ConfusionMatrix) -> Result<KappaScore> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::Metric("cohen kappa: no samples".into()));
    }
    let nf = n as f64;
    let observed = (0..cm.classes).map(|c| cm.get(c, c)).sum::<u64>() as f64 / nf;
    // Integer-exact numerator for p_e before the single division.
    let expected_num: u128 = (0..cm.classes)
        .map(|c| cm.support(c) as u128 * cm.predicted(c) as u128)
        .sum();
    if expected_num == (n as u128) * (n as u128) {
        log::warn!("cohen kappa undefined (expected agreement 1); reporting 0");
        return Ok(KappaScore {
            value: 0.0,
            degenerate: true,
        });
    }
    let expected = expected_num as f64 / (nf * nf);
    Ok(KappaScore {
        value: (observed - expected) / (1.0 - expected),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

pub fn per_class(cm: &ConfusionMatrix) -> Vec<ClassScores> {
    (0..cm.classes)
        .map(|c| {
            let tp = cm.get(c, c) as f64;
            let support = cm.support(c);
            let predicted = cm.predicted(c);
            let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            let recall = if support > 0 { tp / support as f64 } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassScores {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect()
}

/// Support-weighted mean of per-class F1.
pub fn weighted_f1(cm: &ConfusionMatrix) -> Result<f64> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::Metric("weighted F1: no samples".into()));
    }
    Ok(per_class(cm).iter().map(|s| s.support as f64 / n as f64 * s.f1).sum())
}

/// Unweighted mean of per-class F1 over all classes.
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    let scores = per_class(cm);
    scores.iter().map(|s| s.f1).sum::<f64>() / scores.len().max(1) as f64
}

/// Average precision: `sum_k (R_k - R_{k-1}) * P_k` over a descending-score sweep.
/// All samples sharing a score enter the sweep together.
pub fn pr_auc(truth: &[bool], scores: &[f64]) -> Result<f64> {
    if truth.len() != scores.len() {
        return Err(Error::Metric(format!(
            "PR-AUC length mismatch: {} labels vs {} scores",
            truth.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("PR-AUC: NaN score".into()));
    }
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 {
        return Err(Error::Metric("PR-AUC: no positive labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let score = scores[order[i]];
        while i < order.len() && scores[order[i]] == score {
            tp += truth[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Run context attached to every report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub task: String,
    pub backbone_id: String,
    pub views: Vec<String>,
    pub config_hash: String,
    /// Wall-clock seconds spent inside the training loop.
    pub training_seconds: f64,
    #[serde(default)]
    pub noise_sigma: Option<f64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub balanced_accuracy: f64,
    pub cohen_kappa: f64,
    #[serde(default)]
    pub kappa_degenerate: bool,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassScores>,
    /// Positive-class (index 1) precision at the decision threshold; binary tasks only.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// Average precision of the positive-class probability; binary tasks only.
    pub pr_auc: Option<f64>,
    pub samples: u64,
    pub metadata: ReportMetadata,
}

/// Binary decision threshold on the positive-class probability.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Evaluates class probabilities (`rows x classes`, row-major) against labels.
///
/// Multiclass predictions are the argmax (lowest index on ties). Binary tasks predict
/// class 1 when its probability reaches `threshold` and additionally report
/// positive-class precision, recall, F1 and PR-AUC. Multiclass PR-AUC is the
/// one-vs-rest macro average.
pub fn evaluate(
    truth: &[u32],
    probabilities: &[f64],
    classes: usize,
    threshold: f64,
    metadata: ReportMetadata,
) -> Result<EvalReport> {
    if truth.is_empty() {
        return Err(Error::Empty("evaluation set is empty".into()));
    }
    if probabilities.len() != truth.len() * classes {
        return Err(Error::DimensionMismatch {
            what: "probability matrix".into(),
            expected: truth.len() * classes,
            actual: probabilities.len(),
        });
    }
    let rows = probabilities.chunks_exact(classes);
    let pred: Vec<u32> = if classes == 2 {
        rows.map(|p| (p[1] >= threshold) as u32).collect()
    } else {
        rows.map(argmax).map(|i| i as u32).collect()
    };
    let cm = confusion(truth, &pred, classes)?;
    let kappa = cohen_kappa(&cm)?;
    let scores = per_class(&cm);
    let (precision, recall, f1, pr) = if classes == 2 {
        let positive = scores[1];
        let labels: Vec<bool> = truth.iter().map(|&t| t == 1).collect();
        let pos_scores: Vec<f64> = probabilities.chunks_exact(2).map(|p| p[1]).collect();
        let ap = if labels.iter().any(|&t| t) {
            Some(pr_auc(&labels, &pos_scores)?)
        } else {
            None
        };
        (Some(positive.precision), Some(positive.recall), Some(positive.f1), ap)
    } else {
        (None, None, None, macro_pr_auc(truth, probabilities, classes)?)
    };
    Ok(EvalReport {
        balanced_accuracy: balanced_accuracy(&cm)?,
        cohen_kappa: kappa.value,
        kappa_degenerate: kappa.degenerate,
        weighted_f1: weighted_f1(&cm)?,
        per_class: scores,
        precision,
        recall,
        f1,
        pr_auc: pr,
        samples: truth.len() as u64,
        metadata,
    })
}

/// Mean one-vs-rest average precision over the classes present in `truth`.
/// `None` when no class has a positive.
pub fn macro_pr_auc(truth: &[u32], probabilities: &[f64], classes: usize) -> Result<Option<f64>> {
    let mut total = 0.0;
    let mut present = 0;
    for c in 0..classes {
        let labels: Vec<bool> = truth.iter().map(|&t| t as usize == c).collect();
        if !labels.contains(&true) {
            continue;
        }
        let scores: Vec<f64> = probabilities.chunks_exact(classes).map(|p| p[c]).collect();
        total += pr_auc(&labels, &scores)?;
        present += 1;
    }
    Ok((present > 0).then(|| total / present as f64))
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Field-wise mean of several reports (one per seed). Metadata comes from the first
/// report, with training time averaged and seeds merged.
pub fn mean_report(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Metric("no reports to average".into()))?;
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let mean_opt = |f: &dyn Fn(&EvalReport) -> Option<f64>| {
        let vals: Option<Vec<f64>> = reports.iter().map(f).collect();
        vals.map(|v| v.iter().sum::<f64>() / n)
    };
    let per_class = (0..first.per_class.len())
        .map(|c| ClassScores {
            precision: mean(&|r| r.per_class[c].precision),
            recall: mean(&|r| r.per_class[c].recall),
            f1: mean(&|r| r.per_class[c].f1),
            support: first.per_class[c].support,
        })
        .collect();
    let mut metadata = first.metadata.clone();
    metadata.training_seconds = mean(&|r| r.metadata.training_seconds);
    metadata.seeds = reports.iter().flat_map(|r| r.metadata.seeds.iter().copied()).collect();
    Ok(EvalReport {
        balanced_accuracy: mean(&|r| r.balanced_accuracy),
        cohen_kappa: mean(&|r| r.cohen_kappa),
        kappa_degenerate: reports.iter().any(|r| r.kappa_degenerate),
        weighted_f1: mean(&|r| r.weighted_f1),
        per_class,
        precision: mean_opt(&|r| r.precision),
        recall: mean_opt(&|r| r.recall),
        f1: mean_opt(&|r| r.f1),
        pr_auc: mean_opt(&|r| r.pr_auc),
        samples: first.samples,
        metadata,
    })
}

/// Renders rows as an aligned, pipe-separated plain-text table.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells.zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "| {} |", parts.join(" | "));
    };
    line(&mut out, &mut header.iter().copied());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
    for row in rows {
        line(&mut out, &mut row.iter().map(String::as_str));
    }
    out
}

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

fn fmt3(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into())
}

pub fn format_duration(seconds: f64) -> String {
    if seconds < 120.0 {
        format!("{seconds:.1} s")
    } else if seconds < 7200.0 {
        format!("{:.0} minutes", seconds / 60.0)
    } else {
        format!("{:.1} hours", seconds / 3600.0)
    }
}

/// Backbone comparison layout: balanced accuracy, Cohen kappa, weighted F1.
pub fn backbone_table(rows: &[(&str, &EvalReport)]) -> String {
    render_table(
        &[
            "Pretrained Backbone",
            "Balanced Accuracy",
            "Cohen Kappa Score",
            "Weighted F1-Score",
        ],
        &rows
            .iter()
            .map(|(name, r)| {
                vec![
                    name.to_string(),
                    fmt4(r.balanced_accuracy),
                    fmt4(r.cohen_kappa),
                    fmt4(r.weighted_f1),
                ]
            })
            .collect::<Vec<_>>(),
    )
}

/// Biomarker layout: precision, recall, PR-AUC, training time.
pub fn biomarker_table(rows: &[(&str, &str, &EvalReport)]) -> String {
    render_table(
        &["Biomarker", "Method", "Precision", "Recall", "PR-AUC", "Training time"],
        &rows
            .iter()
            .map(|(task, method, r)| {
                vec![
                    task.to_string(),
                    method.to_string(),
                    fmt3(r.precision),
                    fmt3(r.recall),
                    fmt3(r.pr_auc),
                    format_duration(r.metadata.training_seconds),
                ]
            })
            .collect::<Vec<_>>(),
    )
}
