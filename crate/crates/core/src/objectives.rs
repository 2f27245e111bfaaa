//! Inner-loop loss terms evaluated on a probability column recorded on a tape.
//!
//! All terms operate on probabilities, not logits. Group rates in the
//! equalized-odds surrogate are soft (mean predicted probability) so the
//! whole objective stays differentiable.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::real::Real;

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Equalized-odds weight.
    pub gamma: f64,
    /// Margin weight.
    pub alpha: f64,
    /// Label-smoothing term weight.
    pub lambda_smooth: f64,
    pub margin_m: f64,
    /// Target softening: 1 becomes `1 - smooth_amount`, 0 becomes `smooth_amount`.
    pub smooth_amount: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            alpha: 0.2,
            lambda_smooth: 0.1,
            margin_m: 0.5,
            smooth_amount: 0.1,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            gamma: 0.0,
            alpha: 0.0,
            lambda_smooth: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma", self.gamma),
            ("alpha", self.alpha),
            ("lambda_smooth", self.lambda_smooth),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be a finite nonnegative number, got {v}"
                )));
            }
        }
        if !(self.margin_m > 0.0 && self.margin_m.is_finite()) {
            return Err(Error::Config(format!(
                "margin_m must be positive, got {}",
                self.margin_m
            )));
        }
        if !(0.0..0.5).contains(&self.smooth_amount) {
            return Err(Error::Config(format!(
                "smooth_amount must lie in [0, 0.5), got {}",
                self.smooth_amount
            )));
        }
        Ok(())
    }
}

/// Labels and group ids aligned with a probability column.
#[derive(Debug, Clone, Copy)]
pub struct LabeledBatch<'a> {
    pub labels: &'a [u8],
    pub groups: &'a [usize],
}

impl<'a> LabeledBatch<'a> {
    pub fn new(labels: &'a [u8], groups: &'a [usize]) -> Result<Self> {
        if labels.len() != groups.len() {
            return Err(Error::Length {
                expected: labels.len(),
                got: groups.len(),
            });
        }
        Ok(Self { labels, groups })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn rows(&self, pred: impl Fn(u8, usize) -> bool) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| pred(self.labels[i], self.groups[i]))
            .collect()
    }

    fn present_groups(&self) -> Vec<usize> {
        let mut g: Vec<usize> = self.groups.to_vec();
        g.sort_unstable();
        g.dedup();
        g
    }
}

/// Why a term fell back to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossWarning {
    /// Equalized odds needs at least two groups.
    SingleGroup,
    /// Groups present, but no pair shares a class to compare rates on.
    NoComparableRates,
    /// Margin needs both classes.
    MissingClass,
}

/// A loss term together with the reason it degenerated, if it did.
#[derive(Debug, Clone, Copy)]
pub struct Term {
    pub value: Var,
    pub warning: Option<LossWarning>,
}

fn check_probs<S: Real>(tape: &Tape<S>, probs: Var, n: usize, op: &'static str) -> Result<()> {
    let len = tape.value(probs).len();
    if n == 0 {
        return Err(Error::EmptyBatch(op));
    }
    if len != n {
        return Err(Error::Length {
            expected: len,
            got: n,
        });
    }
    Ok(())
}

/// Mean binary cross-entropy against arbitrary targets in `[0, 1]`.
pub fn bce_with_targets<S: Real>(tape: &mut Tape<S>, probs: Var, targets: &[S]) -> Result<Var> {
    check_probs(tape, probs, targets.len(), "bce")?;
    let shape = tape.value(probs).shape().to_vec();
    let lo = S::lit(PROB_CLAMP);
    let p = tape.clamp(probs, lo, S::one() - lo)?;
    let log_p = tape.ln(p)?;
    let q = tape.one_minus(p)?;
    let log_q = tape.ln(q)?;
    let y = tape.constant(Tensor::from_parts(shape.clone(), targets.to_vec()));
    let not_y = tape.constant(Tensor::from_parts(
        shape,
        targets.iter().map(|&t| S::one() - t).collect(),
    ));
    let a = tape.mul(y, log_p)?;
    let b = tape.mul(not_y, log_q)?;
    let ll = tape.add(a, b)?;
    let m = tape.mean(ll)?;
    tape.mul_scalar(m, -S::one())
}

pub fn bce_loss<S: Real>(tape: &mut Tape<S>, probs: Var, labels: &[u8]) -> Result<Var> {
    let targets: Vec<S> = labels.iter().map(|&y| S::lit(f64::from(y))).collect();
    bce_with_targets(tape, probs, &targets)
}

pub fn smoothed_targets<S: Real>(labels: &[u8], amount: f64) -> Vec<S> {
    labels
        .iter()
        .map(|&y| {
            let y = f64::from(y);
            S::lit(y * (1.0 - amount) + (1.0 - y) * amount)
        })
        .collect()
}

pub fn smooth_loss<S: Real>(
    tape: &mut Tape<S>,
    probs: Var,
    labels: &[u8],
    amount: f64,
) -> Result<Var> {
    bce_with_targets(tape, probs, &smoothed_targets(labels, amount))
}

fn zero_term<S: Real>(tape: &mut Tape<S>, warning: LossWarning) -> Term {
    Term {
        value: tape.scalar_constant(S::zero()),
        warning: Some(warning),
    }
}

/// Soft equalized-odds gap.
///
/// For each pair of present groups, averages `|ΔTPR|` and `|ΔFPR|` over the
/// rates both groups can supply; pairs are then averaged. Returns zero with a
/// warning when nothing is comparable.
pub fn eodd_loss<S: Real>(tape: &mut Tape<S>, probs: Var, batch: LabeledBatch<'_>) -> Result<Term> {
    check_probs(tape, probs, batch.len(), "eodd_loss")?;
    let groups = batch.present_groups();
    if groups.len() < 2 {
        return Ok(zero_term(tape, LossWarning::SingleGroup));
    }

    // soft rates per group: (mean prob over positives, mean prob over negatives)
    let mut rates: Vec<(Option<Var>, Option<Var>)> = Vec::with_capacity(groups.len());
    for &g in &groups {
        let mut rate = |label: u8| -> Result<Option<Var>> {
            let rows = batch.rows(|y, gi| y == label && gi == g);
            if rows.is_empty() {
                return Ok(None);
            }
            let sel = tape.select_rows(probs, &rows)?;
            Ok(Some(tape.mean(sel)?))
        };
        let tpr = rate(1)?;
        let fpr = rate(0)?;
        rates.push((tpr, fpr));
    }

    let mut pair_gaps = Vec::new();
    for a in 0..groups.len() {
        for b in a + 1..groups.len() {
            let mut terms = Vec::new();
            for (ra, rb) in [(rates[a].0, rates[b].0), (rates[a].1, rates[b].1)] {
                if let (Some(x), Some(y)) = (ra, rb) {
                    let diff = tape.sub(x, y)?;
                    terms.push(tape.abs(diff)?);
                }
            }
            if terms.is_empty() {
                continue;
            }
            let n = terms.len();
            let mut sum = terms[0];
            for &t in &terms[1..] {
                sum = tape.add(sum, t)?;
            }
            pair_gaps.push(tape.mul_scalar(sum, S::one() / S::lit(n as f64))?);
        }
    }
    if pair_gaps.is_empty() {
        return Ok(zero_term(tape, LossWarning::NoComparableRates));
    }
    let n = pair_gaps.len();
    let mut total = pair_gaps[0];
    for &g in &pair_gaps[1..] {
        total = tape.add(total, g)?;
    }
    let value = if n == 1 {
        total
    } else {
        tape.mul_scalar(total, S::one() / S::lit(n as f64))?
    };
    Ok(Term {
        value,
        warning: None,
    })
}

/// `max(0, m - (mean p | y=1  -  mean p | y=0))`.
pub fn margin_loss<S: Real>(
    tape: &mut Tape<S>,
    probs: Var,
    labels: &[u8],
    margin: f64,
) -> Result<Term> {
    check_probs(tape, probs, labels.len(), "margin_loss")?;
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Ok(zero_term(tape, LossWarning::MissingClass));
    }
    let p = tape.select_rows(probs, &pos)?;
    let zp = tape.mean(p)?;
    let n = tape.select_rows(probs, &neg)?;
    let zn = tape.mean(n)?;
    let gap = tape.sub(zp, zn)?;
    let short = tape.mul_scalar(gap, -S::one())?;
    let short = tape.add_scalar(short, S::lit(margin))?;
    let value = tape.max_scalar(short, S::zero())?;
    Ok(Term {
        value,
        warning: None,
    })
}

/// Weighted inner objective and any degenerate-term warnings.
#[derive(Debug, Clone)]
pub struct InnerLoss {
    pub total: Var,
    pub warnings: Vec<LossWarning>,
}

/// `bce + γ·eodd + α·margin + λ·smooth`. Terms with zero weight are not
/// evaluated at all.
pub fn inner_loss<S: Real>(
    tape: &mut Tape<S>,
    probs: Var,
    batch: LabeledBatch<'_>,
    weights: &LossWeights,
) -> Result<InnerLoss> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("inner_loss"));
    }
    let mut warnings = Vec::new();
    let mut total = bce_loss(tape, probs, batch.labels)?;

    if weights.gamma != 0.0 {
        let term = eodd_loss(tape, probs, batch)?;
        warnings.extend(term.warning);
        let scaled = tape.mul_scalar(term.value, S::lit(weights.gamma))?;
        total = tape.add(total, scaled)?;
    }
    if weights.alpha != 0.0 {
        let term = margin_loss(tape, probs, batch.labels, weights.margin_m)?;
        warnings.extend(term.warning);
        let scaled = tape.mul_scalar(term.value, S::lit(weights.alpha))?;
        total = tape.add(total, scaled)?;
    }
    if weights.lambda_smooth != 0.0 {
        let term = smooth_loss(tape, probs, batch.labels, weights.smooth_amount)?;
        let scaled = tape.mul_scalar(term, S::lit(weights.lambda_smooth))?;
        total = tape.add(total, scaled)?;
    }
    Ok(InnerLoss { total, warnings })
}
