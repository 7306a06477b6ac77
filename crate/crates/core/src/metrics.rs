//! Binary classification metrics: accuracy, sensitivity, specificity (at a
//! 0.5 probability threshold, patient class positive), and AUC via the
//! Mann-Whitney rank statistic with half credit for ties.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion counts at threshold 0.5.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

/// Metrics for one evaluation set, all in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub acc: f64,
    pub sen: f64,
    pub spe: f64,
    pub auc: f64,
    pub confusion: Confusion,
}

/// Mean and (population) standard deviation of per-fold values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd {
        mean,
        std: var.sqrt(),
    }
}

/// Cross-validated report: mean +/- std across folds plus per-fold values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: MeanStd,
    pub sen: MeanStd,
    pub spe: MeanStd,
    pub auc: MeanStd,
    pub folds: Vec<FoldMetrics>,
}

impl MetricsReport {
    pub fn from_folds(folds: Vec<FoldMetrics>) -> Self {
        let collect = |f: &dyn Fn(&FoldMetrics) -> f64| {
            mean_std(&folds.iter().map(f).collect::<Vec<_>>())
        };
        Self {
            acc: collect(&|m| m.acc),
            sen: collect(&|m| m.sen),
            spe: collect(&|m| m.spe),
            auc: collect(&|m| m.auc),
            folds,
        }
    }
}

/// Metrics of one scored evaluation set. `scores` are positive-class
/// probabilities; both classes must be present for the AUC to exist.
pub fn compute_metrics(scores: &[f64], labels: &[usize]) -> Result<FoldMetrics> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "compute_metrics: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::InvalidInput("compute_metrics: empty input".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::AucSingleClass);
    }

    let mut c = Confusion::default();
    for (&s, &l) in scores.iter().zip(labels) {
        let predicted = s >= 0.5;
        match (l == 1, predicted) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }

    // Mann-Whitney U with 0.5 credit for tied scores.
    let mut favorable = 0.0;
    for (&sp, &lp) in scores.iter().zip(labels) {
        if lp != 1 {
            continue;
        }
        for (&sn, &ln) in scores.iter().zip(labels) {
            if ln == 1 {
                continue;
            }
            if sp > sn {
                favorable += 1.0;
            } else if sp == sn {
                favorable += 0.5;
            }
        }
    }
    let auc = favorable / (pos * neg) as f64;

    let pct = |num: usize, den: usize| 100.0 * num as f64 / den as f64;
    Ok(FoldMetrics {
        acc: pct(c.tp + c.tn, labels.len()),
        sen: pct(c.tp, c.tp + c.fn_),
        spe: pct(c.tn, c.tn + c.fp),
        auc: 100.0 * auc,
        confusion: c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking_gives_full_auc() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [1, 1, 0, 0];
        let m = compute_metrics(&scores, &labels).unwrap();
        assert_eq!(m.auc, 100.0);
        assert_eq!(m.acc, 100.0);
    }

    #[test]
    fn all_ties_give_half_auc() {
        let scores = [0.5, 0.5, 0.5, 0.5];
        let labels = [1, 0, 1, 0];
        let m = compute_metrics(&scores, &labels).unwrap();
        assert_eq!(m.auc, 50.0);
    }

    #[test]
    fn worked_four_subject_example() {
        // labels (1,0,1,0), scores (0.9,0.8,0.7,0.1): 3 of 4 pairs favorable
        // -> AUC 75; threshold 0.5 -> ACC 75, SEN 100, SPE 50.
        let scores = [0.9, 0.8, 0.7, 0.1];
        let labels = [1, 0, 1, 0];
        let m = compute_metrics(&scores, &labels).unwrap();
        assert_eq!(m.auc, 75.0);
        assert_eq!(m.acc, 75.0);
        assert_eq!(m.sen, 100.0);
        assert_eq!(m.spe, 50.0);
        // metrics recomputed from confusion counts match exactly
        let c = m.confusion;
        assert_eq!(c, Confusion { tp: 2, fp: 1, tn: 1, fn_: 0 });
        assert_eq!(m.acc, 100.0 * (c.tp + c.tn) as f64 / 4.0);
        assert_eq!(m.sen, 100.0 * c.tp as f64 / (c.tp + c.fn_) as f64);
        assert_eq!(m.spe, 100.0 * c.tn as f64 / (c.tn + c.fp) as f64);
    }

    #[test]
    fn single_class_labels_rejected() {
        assert!(matches!(
            compute_metrics(&[0.5, 0.6], &[1, 1]),
            Err(Error::AucSingleClass)
        ));
    }

    #[test]
    fn report_aggregates_mean_and_std() {
        let fold = |acc: f64| FoldMetrics {
            acc,
            sen: 50.0,
            spe: 50.0,
            auc: 60.0,
            confusion: Confusion::default(),
        };
        let report = MetricsReport::from_folds(vec![fold(80.0), fold(90.0)]);
        assert_eq!(report.acc.mean, 85.0);
        assert_eq!(report.acc.std, 5.0);
        assert_eq!(report.auc.std, 0.0);
    }
}
