//! Patient-level aggregation and classification metrics.
//!
//! Slice probabilities are averaged per patient, the mean is thresholded at
//! 0.5 (ties resolve to class 0), and the resulting hard predictions feed a
//! 2x2 confusion matrix with per-class precision/recall/F1. ROC points are
//! built over descending distinct scores with tied scores grouped into a
//! single step, so the trapezoid AUC equals the Mann-Whitney pair statistic.

use crate::error::{Error, Result};

/// One patient after slice aggregation.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientPrediction {
    pub patient_id: String,
    pub label: u8,
    /// Mean over the patient's slice-level class-1 probabilities.
    pub mean_prob_class1: f64,
    /// 1 iff mean_prob_class1 > 0.5; the tie at exactly 0.5 goes to 0.
    pub predicted: u8,
}

/// Average a patient's slice probabilities into a hard call.
pub fn aggregate_patient(
    patient_id: &str,
    label: u8,
    slice_probs: &[f64],
) -> Result<PatientPrediction> {
    if slice_probs.is_empty() {
        return Err(Error::data(format!(
            "patient {patient_id} has no slice probabilities to aggregate"
        )));
    }
    if label > 1 {
        return Err(Error::data(format!(
            "patient {patient_id} has label {label}, expected 0 or 1"
        )));
    }
    for (i, &p) in slice_probs.iter().enumerate() {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(Error::contract(format!(
                "patient {patient_id} slice {i}: probability {p} outside [0, 1]"
            )));
        }
    }
    let mean = slice_probs.iter().sum::<f64>() / slice_probs.len() as f64;
    Ok(PatientPrediction {
        patient_id: patient_id.to_string(),
        label,
        mean_prob_class1: mean,
        predicted: u8::from(mean > 0.5),
    })
}

/// Precision/recall/F1 for one class. A zero denominator yields 0.0 and
/// sets the matching degenerate flag instead of NaN.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassRates {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_degenerate: bool,
    pub recall_degenerate: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatesReport {
    /// confusion[truth][predicted].
    pub confusion: [[usize; 2]; 2],
    pub accuracy: f64,
    pub per_class: [ClassRates; 2],
}

pub fn confusion_and_rates(preds: &[PatientPrediction]) -> Result<RatesReport> {
    if preds.is_empty() {
        return Err(Error::data("no patient predictions to score".to_string()));
    }
    let mut confusion = [[0usize; 2]; 2];
    for p in preds {
        if p.label > 1 || p.predicted > 1 {
            return Err(Error::contract(format!(
                "patient {}: label {} / predicted {} outside {{0, 1}}",
                p.patient_id, p.label, p.predicted
            )));
        }
        confusion[p.label as usize][p.predicted as usize] += 1;
    }
    let correct = confusion[0][0] + confusion[1][1];
    let accuracy = correct as f64 / preds.len() as f64;
    let per_class = [0usize, 1].map(|class| {
        let tp = confusion[class][class];
        let predicted_positive = confusion[0][class] + confusion[1][class];
        let actual_positive = confusion[class][0] + confusion[class][1];
        let precision_degenerate = predicted_positive == 0;
        let recall_degenerate = actual_positive == 0;
        let precision = if precision_degenerate {
            0.0
        } else {
            tp as f64 / predicted_positive as f64
        };
        let recall = if recall_degenerate {
            0.0
        } else {
            tp as f64 / actual_positive as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassRates {
            precision,
            recall,
            f1,
            precision_degenerate,
            recall_degenerate,
        }
    });
    Ok(RatesReport {
        confusion,
        accuracy,
        per_class,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve and area for binary labels against class-1 scores.
///
/// Points walk descending distinct score values; equal scores move as one
/// group, which makes the trapezoid area identical to the Mann-Whitney
/// statistic (ties counted 1/2). Requires both classes present.
pub fn roc_auc(labels: &[u8], scores: &[f64]) -> Result<(Vec<RocPoint>, f64)> {
    if labels.len() != scores.len() {
        return Err(Error::contract(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::data("no predictions to build a ROC curve".to_string()));
    }
    for (&l, &s) in labels.iter().zip(scores) {
        if l > 1 {
            return Err(Error::data(format!("label {l} outside {{0, 1}}")));
        }
        if !s.is_finite() {
            return Err(Error::contract(format!("non-finite score {s}")));
        }
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::data(format!(
            "ROC needs both classes, got {pos} positive and {neg} negative"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        // consume the whole tie group before emitting a point
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }

    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum();
    Ok((points, auc))
}

/// Full evaluation bundle for one prediction set.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub rates: RatesReport,
    pub roc: Vec<RocPoint>,
    pub auc: f64,
}

impl MetricsReport {
    pub fn compute(preds: &[PatientPrediction]) -> Result<MetricsReport> {
        let rates = confusion_and_rates(preds)?;
        let labels: Vec<u8> = preds.iter().map(|p| p.label).collect();
        let scores: Vec<f64> = preds.iter().map(|p| p.mean_prob_class1).collect();
        let (roc, auc) = roc_auc(&labels, &scores)?;
        Ok(MetricsReport { rates, roc, auc })
    }

    /// `metric,class,value` rows. Degenerate flags serialize as 0/1 so the
    /// schema is identical whether or not a denominator collapsed.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("metric,class,value\n");
        out.push_str(&format!("accuracy,,{}\n", self.rates.accuracy));
        for class in 0..2 {
            let r = &self.rates.per_class[class];
            out.push_str(&format!("precision,{class},{}\n", r.precision));
            out.push_str(&format!("recall,{class},{}\n", r.recall));
            out.push_str(&format!("f1,{class},{}\n", r.f1));
            out.push_str(&format!(
                "precision_degenerate,{class},{}\n",
                u8::from(r.precision_degenerate)
            ));
            out.push_str(&format!(
                "recall_degenerate,{class},{}\n",
                u8::from(r.recall_degenerate)
            ));
        }
        out.push_str(&format!("auc,,{}\n", self.auc));
        out
    }

    pub fn roc_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in &self.roc {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
        }
        out
    }

    /// 2x2 table for terminal output, rows are truth.
    pub fn confusion_table(&self) -> String {
        let c = &self.rates.confusion;
        format!(
            "{:>10} {:>8} {:>8}\n{:>10} {:>8} {:>8}\n{:>10} {:>8} {:>8}\n",
            "", "pred 0", "pred 1", "truth 0", c[0][0], c[0][1], "truth 1", c[1][0], c[1][1]
        )
    }
}
