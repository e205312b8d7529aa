//! Binary-classification evaluation: confusion counts, the derived ratio
//! metrics (accuracy, precision, sensitivity, specificity, IoU, MCC), ROC
//! curves with trapezoidal AUC, and whole-split evaluation.
//!
//! MASK is the positive class everywhere. Ratios with a zero denominator are
//! reported as explicit `None` markers rather than silently collapsing to 0
//! or 1, so degenerate single-class splits remain visible in the output.

use serde::{Deserialize, Serialize};

use crate::backbone::Backbone;
use crate::dataset::{DatasetManifest, Label, Split};
use crate::error::{Error, Result};
use crate::nnhead::{argmax, cross_entropy_in, head_forward_eval, HeadParameters, LossBase};

/// Prediction/truth counts; MASK plays the positive role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
}

impl ConfusionMatrix {
    pub fn new(true_pos: u64, false_pos: u64, true_neg: u64, false_neg: u64) -> Self {
        ConfusionMatrix {
            true_pos,
            false_pos,
            true_neg,
            false_neg,
        }
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }

    /// Labeled 2×2 grid, rows are predictions.
    pub fn to_text(&self) -> String {
        format!(
            "{:<14}{:>12}{:>14}\n{:<14}{:>12}{:>14}\n{:<14}{:>12}{:>14}\n",
            "",
            "truth mask",
            "truth no_mask",
            "pred mask",
            self.true_pos,
            self.false_pos,
            "pred no_mask",
            self.false_neg,
            self.true_neg,
        )
    }

    /// Parses the grid written by [`Self::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let numbers: Vec<u64> = text
            .split_whitespace()
            .filter_map(|tok| tok.parse::<u64>().ok())
            .collect();
        if numbers.len() != 4 {
            return Err(Error::config(format!(
                "confusion grid should contain 4 counts, found {}",
                numbers.len()
            )));
        }
        Ok(ConfusionMatrix::new(numbers[0], numbers[1], numbers[3], numbers[2]))
    }
}

/// The ratio metrics over a confusion matrix plus the separately computed
/// mean cross-entropy. `None` marks a 0/0 ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub iou: Option<f64>,
    pub mcc: Option<f64>,
    pub cross_entropy: Option<f64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Json {
            context: "metrics report".into(),
            source: e,
        })
    }

    /// Aligned table with one row per metric; undefined values print as
    /// `undefined`.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.4}"),
            None => "undefined".to_string(),
        };
        let rows = [
            ("Accuracy", fmt(Some(self.accuracy))),
            ("Precision", fmt(self.precision)),
            ("Sensitivity", fmt(self.sensitivity)),
            ("Specificity", fmt(self.specificity)),
            ("IoU", fmt(self.iou)),
            ("MCC", fmt(self.mcc)),
            ("Classification Loss", fmt(self.cross_entropy)),
        ];
        let mut out = String::new();
        for (name, value) in rows {
            out.push_str(&format!("{name:<20} {value:>10}\n"));
        }
        out
    }
}

/// ROC sweep points (FPR, TPR) from threshold +∞ down, plus trapezoidal
/// AUC. `auc` is `None` when the truths contain only one class.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
    pub auc: Option<f64>,
}

impl RocCurve {
    /// CSV with an `fpr,tpr` header and a trailing `# auc = …` comment.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for (fpr, tpr) in &self.points {
            out.push_str(&format!("{fpr},{tpr}\n"));
        }
        match self.auc {
            Some(a) => out.push_str(&format!("# auc = {a}\n")),
            None => out.push_str("# auc = undefined\n"),
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let fail = |line: usize, message: String| Error::Manifest {
            path: "<roc csv>".into(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "fpr,tpr")) => {}
            other => return Err(fail(1, format!("expected header 'fpr,tpr', got {other:?}"))),
        }
        let mut points = Vec::new();
        let mut auc = None;
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let value = rest.trim().strip_prefix("auc =").map(str::trim);
                match value {
                    Some("undefined") => auc = None,
                    Some(num) => {
                        auc = Some(num.parse::<f64>().map_err(|e| {
                            fail(line_no, format!("bad auc value {num:?}: {e}"))
                        })?)
                    }
                    None => return Err(fail(line_no, format!("unrecognized comment {line:?}"))),
                }
                continue;
            }
            let (a, b) = line
                .split_once(',')
                .ok_or_else(|| fail(line_no, "expected 'fpr,tpr' pair".into()))?;
            let fpr = a.parse::<f64>().map_err(|e| fail(line_no, format!("bad fpr: {e}")))?;
            let tpr = b.parse::<f64>().map_err(|e| fail(line_no, format!("bad tpr: {e}")))?;
            points.push((fpr, tpr));
        }
        Ok(RocCurve { points, auc })
    }
}

/// Tallies predictions against truths; MASK counts as positive.
pub fn confusion(preds: &[Label], truths: &[Label]) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(Error::shape(format!(
            "{} predictions vs {} truths",
            preds.len(),
            truths.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::shape("confusion needs at least one pair"));
    }
    let mut cm = ConfusionMatrix::new(0, 0, 0, 0);
    for (&p, &t) in preds.iter().zip(truths) {
        match (p, t) {
            (Label::Mask, Label::Mask) => cm.true_pos += 1,
            (Label::Mask, Label::NoMask) => cm.false_pos += 1,
            (Label::NoMask, Label::NoMask) => cm.true_neg += 1,
            (Label::NoMask, Label::Mask) => cm.false_neg += 1,
        }
    }
    Ok(cm)
}

/// Derives the ratio metrics from counts. The matrix must contain at least
/// one sample; `cross_entropy` is left unset (the caller supplies it).
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::shape("empty confusion matrix"));
    }
    let (tp, fp, tn, fneg) = (
        cm.true_pos as f64,
        cm.false_pos as f64,
        cm.true_neg as f64,
        cm.false_neg as f64,
    );
    let ratio = |num: f64, den: f64| if den == 0.0 { None } else { Some(num / den) };
    let mcc_den = (tp + fp) * (tp + fneg) * (tn + fp) * (tn + fneg);
    let mcc = if mcc_den == 0.0 {
        None
    } else {
        Some((tp * tn - fp * fneg) / mcc_den.sqrt())
    };
    Ok(MetricsReport {
        accuracy: (tp + tn) / total as f64,
        precision: ratio(tp, tp + fp),
        sensitivity: ratio(tp, tp + fneg),
        specificity: ratio(tn, tn + fp),
        iou: ratio(tp, tp + fp + fneg),
        mcc,
        cross_entropy: None,
    })
}

/// Threshold sweep over the distinct scores (descending), equal scores
/// grouped into one step; AUC by the trapezoid rule.
///
/// `scores` are P(MASK). Truths with only one class present yield the
/// degenerate two-point curve and an undefined AUC.
pub fn roc(scores: &[f64], truths: &[Label]) -> Result<RocCurve> {
    if scores.len() != truths.len() {
        return Err(Error::shape(format!(
            "{} scores vs {} truths",
            scores.len(),
            truths.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::shape("roc needs at least one sample"));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::shape(format!("non-finite score {bad}")));
    }
    let pos_total = truths.iter().filter(|&&t| t == Label::Mask).count() as f64;
    let neg_total = truths.len() as f64 - pos_total;
    if pos_total == 0.0 || neg_total == 0.0 {
        return Ok(RocCurve {
            points: vec![(0.0, 0.0), (1.0, 1.0)],
            auc: None,
        });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        // One sweep step per distinct score value.
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            match truths[order[i]] {
                Label::Mask => tp += 1,
                Label::NoMask => fp += 1,
            }
            i += 1;
        }
        points.push((fp as f64 / neg_total, tp as f64 / pos_total));
    }

    let mut auc = 0.0;
    for pair in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (pair[0], pair[1]);
        auc += (x1 - x0) * (y0 + y1) / 2.0;
    }
    Ok(RocCurve {
        points,
        auc: Some(auc),
    })
}

/// Runs an eval-mode forward over every record of `split`, producing the
/// metric report (with mean cross-entropy in `base`), the confusion matrix,
/// and the ROC curve over P(MASK) scores.
pub fn evaluate(
    manifest: &DatasetManifest,
    split: Split,
    backbone: &Backbone,
    params: &HeadParameters,
    base: LossBase,
) -> Result<(MetricsReport, ConfusionMatrix, RocCurve)> {
    let records: Vec<_> = manifest.split_records(split).collect();
    if records.is_empty() {
        return Err(Error::EmptySplit {
            split: split.to_string(),
        });
    }
    let mut preds = Vec::with_capacity(records.len());
    let mut truths = Vec::with_capacity(records.len());
    let mut scores = Vec::with_capacity(records.len());
    let mut loss_sum = 0.0f64;
    for rec in &records {
        let fm = backbone.features_for_path(&rec.path)?;
        let trace = head_forward_eval(&fm, params)?;
        let probs = trace.probs();
        preds.push(Label::from_index(argmax(probs)));
        truths.push(rec.label);
        scores.push(probs[Label::Mask.index()] as f64);
        loss_sum += cross_entropy_in(probs, &rec.label.one_hot(), base)?;
    }
    let cm = confusion(&preds, &truths)?;
    let mut report = compute_metrics(&cm)?;
    report.cross_entropy = Some(loss_sum / records.len() as f64);
    let curve = roc(&scores, &truths)?;
    Ok((report, cm, curve))
}
