use std::fmt::Write as _;

use crate::dataset::SceneDataset;
use crate::error::{Error, Result};
use crate::label::{Image, LabelMask, IGNORE};
use crate::model::ModelState;
use crate::pseudolabel::{aligned_prediction, argmax_labels};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub iteration: usize,
    /// NaN for classes absent from both ground truth and prediction.
    pub per_class_iou: Vec<f64>,
    pub miou: f64,
    /// `confusion[gt][pred]` pixel counts.
    pub confusion: Vec<Vec<u64>>,
    pub budget_hours: f64,
}

/// Average of the class probabilities over `scales`, each mapped back to
/// the input size, followed by a per-pixel argmax.
pub fn predict_multiscale(model: &ModelState, image: &Image, scales: &[f64]) -> Result<LabelMask> {
    if scales.is_empty() {
        return Err(Error::invalid("need at least one evaluation scale"));
    }
    let mut acc = aligned_prediction(model, image, false, scales[0], true)?;
    for &s in &scales[1..] {
        acc.add_assign(&aligned_prediction(model, image, false, s, true)?);
    }
    argmax_labels(&acc)
}

/// Tally `confusion[gt][pred]`, skipping IGNORE ground-truth pixels.
pub fn confusion_matrix(gt: &LabelMask, pred: &LabelMask, num_classes: usize, into: &mut [Vec<u64>]) -> Result<()> {
    if gt.labels().len() != pred.labels().len() {
        return Err(Error::shape("ground truth and prediction differ in size"));
    }
    for (&g, &p) in gt.labels().iter().zip(pred.labels()) {
        if g == IGNORE {
            continue;
        }
        let (g, p) = (usize::from(g), usize::from(p));
        if g >= num_classes || p >= num_classes {
            return Err(Error::invalid(format!("class id {} outside {num_classes} classes", g.max(p))));
        }
        into[g][p] += 1;
    }
    Ok(())
}

/// Per-class IoU and their mean over classes seen in ground truth or prediction.
pub fn iou_from_confusion(confusion: &[Vec<u64>]) -> (Vec<f64>, f64) {
    let c = confusion.len();
    let ious: Vec<f64> = (0..c)
        .map(|k| {
            let tp = confusion[k][k];
            let gt: u64 = confusion[k].iter().sum();
            let pred: u64 = confusion.iter().map(|row| row[k]).sum();
            let union = gt + pred - tp;
            if union == 0 {
                f64::NAN
            } else {
                tp as f64 / union as f64
            }
        })
        .collect();
    let present: Vec<f64> = ious.iter().copied().filter(|v| !v.is_nan()).collect();
    let miou = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    (ious, miou)
}

pub fn evaluate(model: &ModelState, valset: &SceneDataset, scales: &[f64]) -> Result<EvalReport> {
    let c = model.arch.num_classes;
    if valset.num_classes != c {
        return Err(Error::invalid(format!("model has {c} classes, validation set {}", valset.num_classes)));
    }
    let mut confusion = vec![vec![0u64; c]; c];
    for r in &valset.records {
        let pred = predict_multiscale(model, &r.image, scales)?;
        confusion_matrix(&r.label, &pred, c, &mut confusion)?;
    }
    let (per_class_iou, miou) = iou_from_confusion(&confusion);
    Ok(EvalReport { iteration: 0, per_class_iou, miou, confusion, budget_hours: 0.0 })
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.6}")
    }
}

/// `iteration,class_0..class_{C-1},miou,budget_hours` rows.
pub fn report_csv(reports: &[EvalReport]) -> String {
    let c = reports.first().map_or(0, |r| r.per_class_iou.len());
    let mut out = String::from("iteration");
    for k in 0..c {
        let _ = write!(out, ",class_{k}");
    }
    out.push_str(",miou,budget_hours\n");
    for r in reports {
        let _ = write!(out, "{}", r.iteration);
        for &v in &r.per_class_iou {
            let _ = write!(out, ",{}", fmt_f64(v));
        }
        let _ = writeln!(out, ",{},{}", fmt_f64(r.miou), fmt_f64(r.budget_hours));
    }
    out
}
