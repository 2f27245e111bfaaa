//! Hard-decision fairness metrics and accuracy/Eopp Pareto analysis.

mod pareto;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::mean_std;

pub use pareto::{dominates, pareto_frontier, ParetoPoint};

/// Decision threshold on predicted probabilities.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn size(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.fp + self.tn
    }

    pub fn tpr(&self) -> Option<f64> {
        (self.positives() > 0).then(|| self.tp as f64 / self.positives() as f64)
    }

    pub fn fpr(&self) -> Option<f64> {
        (self.negatives() > 0).then(|| self.fp as f64 / self.negatives() as f64)
    }

    pub fn positive_rate(&self) -> Option<f64> {
        (self.size() > 0).then(|| (self.tp + self.fp) as f64 / self.size() as f64)
    }
}

/// Confusion counts indexed by group id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupConfusion {
    pub groups: Vec<Counts>,
}

/// Why a metric could not be computed for an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MetricWarning {
    EmptyGroup { metric: &'static str, group: usize },
    NoPositives { metric: &'static str, group: usize },
    NoNegatives { metric: &'static str, group: usize },
}

impl fmt::Display for MetricWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricWarning::EmptyGroup { metric, group } => {
                write!(f, "{metric} undefined: group {group} is empty")
            }
            MetricWarning::NoPositives { metric, group } => {
                write!(f, "{metric} undefined: group {group} has no positives")
            }
            MetricWarning::NoNegatives { metric, group } => {
                write!(f, "{metric} undefined: group {group} has no negatives")
            }
        }
    }
}

pub fn confusion(
    preds: &[u8],
    labels: &[u8],
    groups: &[usize],
    n_groups: usize,
) -> Result<GroupConfusion> {
    if preds.is_empty() {
        return Err(Error::EmptyBatch("confusion"));
    }
    if preds.len() != labels.len() || preds.len() != groups.len() {
        return Err(Error::Length {
            expected: preds.len(),
            got: labels.len().min(groups.len()),
        });
    }
    let width = groups
        .iter()
        .copied()
        .max()
        .map_or(0, |g| g + 1)
        .max(n_groups);
    let mut counts = vec![Counts::default(); width];
    for ((&p, &y), &g) in preds.iter().zip(labels).zip(groups) {
        let c = &mut counts[g];
        match (p != 0, y != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(GroupConfusion { groups: counts })
}

fn range(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

impl GroupConfusion {
    pub fn total(&self) -> Counts {
        self.groups.iter().fold(Counts::default(), |a, c| Counts {
            tp: a.tp + c.tp,
            fp: a.fp + c.fp,
            tn: a.tn + c.tn,
            fn_: a.fn_ + c.fn_,
        })
    }

    pub fn accuracy(&self) -> f64 {
        let t = self.total();
        (t.tp + t.tn) as f64 / t.size().max(1) as f64
    }

    /// `min / max` of per-group positive-prediction rates; 1 when every rate
    /// is zero.
    pub fn disparate_impact(&self) -> Result<f64, MetricWarning> {
        let rates = self
            .groups
            .iter()
            .enumerate()
            .map(|(g, c)| {
                c.positive_rate().ok_or(MetricWarning::EmptyGroup {
                    metric: "di",
                    group: g,
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(if hi == 0.0 { 1.0 } else { lo / hi })
    }

    fn tprs(&self, metric: &'static str) -> Result<Vec<f64>, MetricWarning> {
        self.groups
            .iter()
            .enumerate()
            .map(|(g, c)| {
                c.tpr()
                    .ok_or(MetricWarning::NoPositives { metric, group: g })
            })
            .collect()
    }

    /// Spread of true-positive rates across groups (`|TPR_0 - TPR_1|` for two).
    pub fn equal_opportunity(&self) -> Result<f64, MetricWarning> {
        Ok(range(&self.tprs("eopp")?))
    }

    /// `½ (ΔTPR + ΔFPR)` on thresholded rates.
    pub fn equalized_odds_gap(&self) -> Result<f64, MetricWarning> {
        let tprs = self.tprs("eodd")?;
        let fprs = self
            .groups
            .iter()
            .enumerate()
            .map(|(g, c)| {
                c.fpr().ok_or(MetricWarning::NoNegatives {
                    metric: "eodd",
                    group: g,
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        Ok(0.5 * (range(&tprs) + range(&fprs)))
    }
}

/// Metrics for one evaluation; undefined metrics are `None` with a warning.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessReport {
    pub accuracy: f64,
    pub di: Option<f64>,
    pub eopp: Option<f64>,
    pub eodd: Option<f64>,
    pub confusion: GroupConfusion,
    pub warnings: Vec<MetricWarning>,
}

impl FairnessReport {
    pub fn from_confusion(confusion: GroupConfusion) -> Self {
        let mut warnings = Vec::new();
        let mut keep = |r: Result<f64, MetricWarning>| match r {
            Ok(v) => Some(v),
            Err(w) => {
                warnings.push(w);
                None
            }
        };
        let di = keep(confusion.disparate_impact());
        let eopp = keep(confusion.equal_opportunity());
        let eodd = keep(confusion.equalized_odds_gap());
        Self {
            accuracy: confusion.accuracy(),
            di,
            eopp,
            eodd,
            confusion,
            warnings,
        }
    }

    /// Thresholds `probs` at [`THRESHOLD`] and computes every metric.
    pub fn from_probs(
        probs: &[f64],
        labels: &[u8],
        groups: &[usize],
        n_groups: usize,
    ) -> Result<Self> {
        let preds: Vec<u8> = probs.iter().map(|&p| u8::from(p >= THRESHOLD)).collect();
        Ok(Self::from_confusion(confusion(
            &preds, labels, groups, n_groups,
        )?))
    }
}

/// Mean and population std over the evaluations where a metric was defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub excluded: usize,
}

impl MetricSummary {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let mut defined = Vec::new();
        let mut excluded = 0;
        for v in values {
            match v {
                Some(x) => defined.push(x),
                None => excluded += 1,
            }
        }
        let (mean, std) = mean_std(&defined);
        Self {
            mean,
            std,
            n: defined.len(),
            excluded,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n_tasks: usize,
    pub accuracy: MetricSummary,
    pub di: MetricSummary,
    pub eopp: MetricSummary,
    pub eodd: MetricSummary,
}

impl AggregateReport {
    pub fn of(reports: &[FairnessReport]) -> Self {
        Self {
            n_tasks: reports.len(),
            accuracy: MetricSummary::of(reports.iter().map(|r| Some(r.accuracy))),
            di: MetricSummary::of(reports.iter().map(|r| r.di)),
            eopp: MetricSummary::of(reports.iter().map(|r| r.eopp)),
            eodd: MetricSummary::of(reports.iter().map(|r| r.eodd)),
        }
    }

    fn metrics(&self) -> [(&'static str, &MetricSummary); 4] {
        [
            ("accuracy", &self.accuracy),
            ("di", &self.di),
            ("eopp", &self.eopp),
            ("eodd", &self.eodd),
        ]
    }

    /// `key=value` lines.
    pub fn to_record(&self) -> String {
        let mut out = format!("n_tasks={}\n", self.n_tasks);
        for (name, m) in self.metrics() {
            out.push_str(&format!(
                "{name}_mean={}\n{name}_std={}\n{name}_excluded={}\n",
                m.mean, m.std, m.excluded
            ));
        }
        out
    }

    pub const CSV_HEADER: &'static str = "n_tasks,accuracy_mean,accuracy_std,di_mean,di_std,di_excluded,eopp_mean,eopp_std,eopp_excluded,eodd_mean,eodd_std,eodd_excluded";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.n_tasks,
            self.accuracy.mean,
            self.accuracy.std,
            self.di.mean,
            self.di.std,
            self.di.excluded,
            self.eopp.mean,
            self.eopp.std,
            self.eopp.excluded,
            self.eodd.mean,
            self.eodd.std,
            self.eodd.excluded
        )
    }
}

impl fmt::Display for AggregateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "tasks: {}", self.n_tasks)?;
        for (name, m) in self.metrics() {
            write!(f, "{name:>8}: {:.4} ± {:.4}", m.mean, m.std)?;
            if m.excluded > 0 {
                write!(f, "  ({} tasks undefined)", m.excluded)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(g0: (usize, usize, usize, usize), g1: (usize, usize, usize, usize)) -> GroupConfusion {
        let c = |(tp, fp, tn, fn_)| Counts { tp, fp, tn, fn_ };
        GroupConfusion {
            groups: vec![c(g0), c(g1)],
        }
    }

    #[test]
    fn perfect_and_inverted_predictions() {
        let labels = [1, 0, 1, 0, 1, 1];
        let groups = [0, 0, 1, 1, 1, 0];
        let c = confusion(&labels, &labels, &groups, 2).unwrap();
        assert!(c.groups.iter().all(|g| g.fp == 0 && g.fn_ == 0));
        let inv: Vec<u8> = labels.iter().map(|y| 1 - y).collect();
        let c = confusion(&inv, &labels, &groups, 2).unwrap();
        assert!(c.groups.iter().all(|g| g.tp == 0 && g.tn == 0));
        assert!(confusion(&[], &[], &[], 2).is_err());
    }

    #[test]
    fn disparate_impact_closed_forms() {
        // positive rates 0.2 and 0.4
        let c = table((1, 1, 8, 0), (2, 2, 6, 0));
        assert!((c.disparate_impact().unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(
            table((1, 0, 1, 0), (1, 0, 1, 0))
                .disparate_impact()
                .unwrap(),
            1.0
        );
        assert_eq!(
            table((0, 0, 3, 1), (0, 0, 2, 2))
                .disparate_impact()
                .unwrap(),
            1.0
        );
        assert_eq!(
            table((0, 0, 3, 1), (1, 0, 2, 2))
                .disparate_impact()
                .unwrap(),
            0.0
        );
        assert!(table((1, 0, 0, 0), (0, 0, 0, 0))
            .disparate_impact()
            .is_err());
    }

    #[test]
    fn opportunity_and_odds_closed_forms() {
        assert_eq!(
            table((2, 0, 1, 0), (3, 1, 0, 0))
                .equal_opportunity()
                .unwrap(),
            0.0
        );
        assert_eq!(
            table((2, 0, 1, 0), (0, 1, 0, 3))
                .equal_opportunity()
                .unwrap(),
            1.0
        );
        // TPR 0.8 vs 0.6, FPR 0.1 vs 0.2
        let c = table((8, 1, 9, 2), (6, 2, 8, 4));
        assert!((c.equalized_odds_gap().unwrap() - 0.15).abs() < 1e-12);
        assert_eq!(
            table((1, 0, 1, 0), (0, 0, 2, 0)).equal_opportunity(),
            Err(MetricWarning::NoPositives {
                metric: "eopp",
                group: 1
            })
        );
    }

    #[test]
    fn constant_half_probability_gives_parity() {
        let probs = [0.5; 6];
        let r = FairnessReport::from_probs(&probs, &[1, 0, 1, 0, 1, 0], &[0, 0, 0, 1, 1, 1], 2)
            .unwrap();
        assert_eq!(r.di, Some(1.0));
        assert_eq!(r.eopp, Some(0.0));
    }

    #[test]
    fn summary_excludes_undefined() {
        let s = MetricSummary::of([Some(0.6), None, Some(0.7)]);
        assert_eq!(s.n, 2);
        assert_eq!(s.excluded, 1);
        assert!((s.mean - 0.65).abs() < 1e-12 && (s.std - 0.05).abs() < 1e-12);
    }
}
