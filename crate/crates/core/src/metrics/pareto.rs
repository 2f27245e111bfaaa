use serde::{Deserialize, Serialize};

/// A configuration summarized by (accuracy ↑, Eopp ↓).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub accuracy: f64,
    pub eopp: f64,
    pub tag: String,
}

impl ParetoPoint {
    pub fn new(accuracy: f64, eopp: f64, tag: impl Into<String>) -> Self {
        Self {
            accuracy,
            eopp,
            tag: tag.into(),
        }
    }
}

/// `a` is at least as accurate and at least as fair as `b`, and strictly
/// better in one of the two.
pub fn dominates(a: &ParetoPoint, b: &ParetoPoint) -> bool {
    a.accuracy >= b.accuracy && a.eopp <= b.eopp && (a.accuracy > b.accuracy || a.eopp < b.eopp)
}

/// Non-dominated points, sorted by accuracy descending. Equal points are all
/// kept, in input order.
pub fn pareto_frontier(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    // sweep in (accuracy desc, eopp asc) order: a point survives iff its eopp
    // is no worse than the best eopp among strictly more accurate points and
    // not beaten by an equally accurate point with lower eopp
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[j]
            .accuracy
            .total_cmp(&points[i].accuracy)
            .then(points[i].eopp.total_cmp(&points[j].eopp))
            .then(i.cmp(&j))
    });

    let mut keep = vec![false; points.len()];
    let mut best_above = f64::INFINITY;
    let mut k = 0;
    while k < order.len() {
        let acc = points[order[k]].accuracy;
        let mut end = k;
        while end < order.len() && points[order[end]].accuracy == acc {
            end += 1;
        }
        let tier_best = points[order[k]].eopp;
        for &i in &order[k..end] {
            let p = &points[i];
            keep[i] = p.eopp == tier_best && p.eopp < best_above || p.eopp.is_nan() || acc.is_nan();
        }
        best_above = best_above.min(tier_best);
        k = end;
    }

    let mut out: Vec<usize> = (0..points.len()).filter(|&i| keep[i]).collect();
    out.sort_by(|&i, &j| {
        points[j]
            .accuracy
            .total_cmp(&points[i].accuracy)
            .then(i.cmp(&j))
    });
    out.into_iter().map(|i| points[i].clone()).collect()
}
