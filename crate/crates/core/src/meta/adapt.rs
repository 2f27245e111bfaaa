use crate::autodiff::{ParamSet, Tape};
use crate::backbone::{Backbone, Mode};
use crate::data::ParticipantRecord;
use crate::error::{Error, Result};
use crate::objectives::{bce_loss, inner_loss, LabeledBatch, LossWarning, LossWeights};
use crate::real::Real;
use crate::vector;

/// Result of the inner loop on one support set.
#[derive(Debug, Clone)]
pub struct Adaptation<S> {
    pub params: ParamSet<S>,
    /// Support loss before each step.
    pub loss_trace: Vec<S>,
    pub warnings: Vec<LossWarning>,
}

/// Query-set gradients at the adapted parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle<S> {
    pub g_full: Vec<S>,
    /// One entry per group; zeros for groups absent from the query.
    pub g_group: Vec<Vec<S>>,
    pub present: Vec<bool>,
    pub counts: Vec<usize>,
    /// Sum over present pairs `i < j` of `g_group[i] - g_group[j]`.
    pub d: Vec<S>,
    pub query_loss: S,
}

impl<S: Real> GradientBundle<S> {
    pub fn len(&self) -> usize {
        self.g_full.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g_full.is_empty()
    }

    /// Zero bundle of the given shape.
    pub fn zeros(len: usize, n_groups: usize) -> Self {
        Self {
            g_full: vec![S::zero(); len],
            g_group: vec![vec![S::zero(); len]; n_groups],
            present: vec![false; n_groups],
            counts: vec![0; n_groups],
            d: vec![S::zero(); len],
            query_loss: S::zero(),
        }
    }

    pub fn check(&self) -> Result<()> {
        for v in self.g_group.iter().chain([&self.d]) {
            vector::check_len(&self.g_full, v)?;
        }
        if self.g_group.len() != self.present.len() || self.present.len() != self.counts.len() {
            return Err(Error::shape(
                "gradient bundle",
                format!(
                    "{} group gradients, {} presence flags, {} counts",
                    self.g_group.len(),
                    self.present.len(),
                    self.counts.len()
                ),
            ));
        }
        Ok(())
    }
}

/// Pairwise-difference sum over the groups flagged present.
pub fn disparity<S: Real>(g_group: &[Vec<S>], present: &[bool]) -> Vec<S> {
    let len = g_group.first().map_or(0, Vec::len);
    let mut d = vec![S::zero(); len];
    let idx: Vec<usize> = (0..g_group.len()).filter(|&g| present[g]).collect();
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            for (k, dk) in d.iter_mut().enumerate() {
                *dk = *dk + (g_group[i][k] - g_group[j][k]);
            }
        }
    }
    d
}

fn features<'a, S>(items: &[&'a ParticipantRecord<S>]) -> Vec<&'a crate::autodiff::Tensor<S>> {
    items.iter().map(|r| &r.features).collect()
}

/// `L_inner` on `items` and its gradient with respect to `params`.
pub fn support_loss<S: Real>(
    backbone: &Backbone,
    params: &ParamSet<S>,
    items: &[&ParticipantRecord<S>],
    weights: &LossWeights,
    mode: Mode,
    dropout_seed: u64,
) -> Result<(S, Vec<S>, Vec<LossWarning>)> {
    if items.is_empty() {
        return Err(Error::EmptyBatch("support set"));
    }
    let labels: Vec<u8> = items.iter().map(|r| r.label).collect();
    let groups: Vec<usize> = items.iter().map(|r| r.group).collect();
    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape);
    let x = tape.constant(backbone.stack(&features(items))?);
    let probs = backbone.forward_on_tape(&mut tape, &vars, x, mode, dropout_seed)?;
    let loss = inner_loss(
        &mut tape,
        probs,
        LabeledBatch::new(&labels, &groups)?,
        weights,
    )?;
    let value = tape.value(loss.total).item();
    let mut grads = tape.backward(loss.total)?;
    Ok((
        value,
        params.flat_gradient(&mut grads, &vars),
        loss.warnings,
    ))
}

/// `steps` full-batch gradient-descent steps on the support loss, starting
/// from `theta`. Every step reuses `dropout_seed`.
pub fn inner_adapt<S: Real>(
    backbone: &Backbone,
    theta: &ParamSet<S>,
    support: &[&ParticipantRecord<S>],
    weights: &LossWeights,
    eta: f64,
    steps: usize,
    dropout_seed: u64,
) -> Result<Adaptation<S>> {
    if support.is_empty() {
        return Err(Error::EmptyBatch("support set"));
    }
    let mut params = theta.clone();
    let mut loss_trace = Vec::with_capacity(steps);
    let mut warnings = Vec::new();
    for _ in 0..steps {
        let (loss, grad, w) = support_loss(
            backbone,
            &params,
            support,
            weights,
            Mode::Train,
            dropout_seed,
        )?;
        loss_trace.push(loss);
        warnings.extend(w);
        params = params.descend(&grad, S::lit(eta))?;
    }
    Ok(Adaptation {
        params,
        loss_trace,
        warnings,
    })
}

/// Mean query BCE gradients at `phi`: over the whole query and per group.
pub fn group_gradients<S: Real>(
    backbone: &Backbone,
    phi: &ParamSet<S>,
    query: &[&ParticipantRecord<S>],
    n_groups: usize,
) -> Result<GradientBundle<S>> {
    if query.is_empty() {
        return Err(Error::EmptyBatch("query set"));
    }
    let labels: Vec<u8> = query.iter().map(|r| r.label).collect();
    let mut tape = Tape::new();
    let vars = phi.to_tape(&mut tape);
    let x = tape.constant(backbone.stack(&features(query))?);
    let probs = backbone.forward_on_tape(&mut tape, &vars, x, Mode::Eval, 0)?;
    let full = bce_loss(&mut tape, probs, &labels)?;
    let query_loss = tape.value(full).item();
    let g_full = phi.flat_gradient(&mut tape.backward(full)?, &vars);

    let mut counts = vec![0; n_groups];
    for r in query {
        if r.group >= n_groups {
            return Err(Error::Task(format!(
                "{} has group {} of {n_groups}",
                r.id, r.group
            )));
        }
        counts[r.group] += 1;
    }
    let present: Vec<bool> = counts.iter().map(|&c| c > 0).collect();
    let mut g_group = Vec::with_capacity(n_groups);
    for g in 0..n_groups {
        if !present[g] {
            g_group.push(vec![S::zero(); g_full.len()]);
            continue;
        }
        let rows: Vec<usize> = (0..query.len()).filter(|&i| query[i].group == g).collect();
        let sel = tape.select_rows(probs, &rows)?;
        let sub_labels: Vec<u8> = rows.iter().map(|&i| labels[i]).collect();
        let loss = bce_loss(&mut tape, sel, &sub_labels)?;
        g_group.push(phi.flat_gradient(&mut tape.backward(loss)?, &vars));
    }
    let d = disparity(&g_group, &present);
    Ok(GradientBundle {
        g_full,
        g_group,
        present,
        counts,
        d,
        query_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::backbone::BackboneConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> Backbone {
        Backbone::new(BackboneConfig {
            input_dim: 3,
            seq_len: 4,
            lstm_hidden: 3,
            gru_hidden: 3,
            dropout_rate: 0.2,
        })
        .unwrap()
    }

    fn records(n: usize, groups: &[usize], seed: u64) -> Vec<ParticipantRecord<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| ParticipantRecord {
                id: format!("r{i}"),
                group: groups[i % groups.len()],
                label: (i % 2) as u8,
                features: Tensor::matrix(
                    4,
                    3,
                    (0..12).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
                .unwrap(),
            })
            .collect()
    }

    #[test]
    fn zero_rate_or_steps_is_identity() {
        let b = tiny();
        let theta = b.init_params::<f64>(1);
        let recs = records(6, &[0, 1], 0);
        let items: Vec<_> = recs.iter().collect();
        let w = LossWeights::default();
        assert_eq!(
            inner_adapt(&b, &theta, &items, &w, 0.0, 3, 0)
                .unwrap()
                .params,
            theta
        );
        let a = inner_adapt(&b, &theta, &items, &w, 0.1, 0, 0).unwrap();
        assert_eq!(a.params, theta);
        assert!(a.loss_trace.is_empty());
        assert!(inner_adapt(&b, &theta, &[], &w, 0.1, 1, 0).is_err());
    }

    #[test]
    fn loss_trace_non_increasing() {
        let b = tiny();
        let theta = b.init_params::<f64>(4);
        let recs = records(10, &[0, 1], 3);
        let items: Vec<_> = recs.iter().collect();
        let w = LossWeights::default();
        let a = inner_adapt(&b, &theta, &items, &w, 1e-3, 3, 7).unwrap();
        let (last, _, _) = support_loss(&b, &a.params, &items, &w, Mode::Train, 7).unwrap();
        let mut trace = a.loss_trace.clone();
        trace.push(last);
        for pair in trace.windows(2) {
            assert!(pair[1] <= pair[0], "{trace:?}");
        }
    }

    #[test]
    fn single_group_has_zero_disparity() {
        let b = tiny();
        let phi = b.init_params::<f64>(2);
        let recs = records(5, &[1], 1);
        let items: Vec<_> = recs.iter().collect();
        let bundle = group_gradients(&b, &phi, &items, 2).unwrap();
        assert!(bundle.d.iter().all(|&x| x == 0.0));
        assert!(bundle.g_group[0].iter().all(|&x| x == 0.0));
        assert_eq!(bundle.g_group[1], bundle.g_full);
        assert!(group_gradients(&b, &phi, &[], 2).is_err());
    }

    #[test]
    fn identical_groups_cancel() {
        let b = tiny();
        let phi = b.init_params::<f64>(2);
        let base = records(3, &[0], 5);
        let mut recs = base.clone();
        recs.extend(base.iter().map(|r| ParticipantRecord {
            group: 1,
            ..r.clone()
        }));
        let items: Vec<_> = recs.iter().collect();
        let bundle = group_gradients(&b, &phi, &items, 2).unwrap();
        assert_eq!(bundle.g_group[0], bundle.g_group[1]);
        assert!(bundle.d.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn full_gradient_is_count_weighted_mean() {
        let b = tiny();
        for seed in 0..5 {
            let phi = b.init_params::<f64>(seed);
            let recs = records(7 + seed as usize, &[0, 1, 1], seed);
            let items: Vec<_> = recs.iter().collect();
            let bundle = group_gradients(&b, &phi, &items, 2).unwrap();
            let q = items.len() as f64;
            let mixed: Vec<f64> = (0..bundle.len())
                .map(|k| {
                    (0..2)
                        .map(|g| bundle.counts[g] as f64 * bundle.g_group[g][k])
                        .sum::<f64>()
                        / q
                })
                .collect();
            let err = vector::norm(&vector::sub(&mixed, &bundle.g_full));
            assert!(err <= 1e-10 * vector::norm(&bundle.g_full), "{err}");
        }
    }

    #[test]
    fn disparity_sums_present_pairs() {
        let g = vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![5.0, 5.0]];
        assert_eq!(disparity(&g, &[true, true, false]), vec![1.0, -2.0]);
        // (g0-g1) + (g0-g2) + (g1-g2)
        assert_eq!(disparity(&g, &[true, true, true]), vec![-8.0, -10.0]);
    }
}
