//! Group-aware loss functionals.
//!
//! Everything here operates on per-sample losses that have already been
//! computed by the model, keyed by dense group indices `0..n_groups`
//! (the dataset owns the mapping from `(c, y)` ids to indices, sorted
//! lexicographically so index order is deterministic).

use crate::error::{Error, Result};

/// Simplex-constrained per-group weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupWeights {
    q: Vec<f64>,
}

impl GroupWeights {
    pub fn uniform(n_groups: usize) -> Self {
        Self {
            q: vec![1.0 / n_groups as f64; n_groups],
        }
    }

    /// Validates nonnegativity and unit sum (within 1e-9).
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::Config("group weights must be non-empty".into()));
        }
        let mut sum = 0.0;
        for (g, &v) in q.iter().enumerate() {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("group weight {g} is negative: {v}")));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "group weights sum to {sum}, expected 1"
            )));
        }
        Ok(Self { q })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn get(&self, group: usize) -> f64 {
        self.q[group]
    }
}

/// Per-group batch statistics: mean loss and count per group, and the
/// worst (highest mean loss) non-empty group.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGroupStats {
    pub per_group_loss: Vec<f64>,
    pub per_group_count: Vec<usize>,
    pub worst_group: usize,
}

impl BatchGroupStats {
    pub fn n_groups(&self) -> usize {
        self.per_group_loss.len()
    }
}

/// Mean loss per group over a batch. Groups absent from the batch carry
/// count 0 and loss 0 and are excluded from the worst-group argmax; argmax
/// ties break to the lowest group index.
pub fn per_group_losses(
    sample_losses: &[f64],
    group_indices: &[usize],
    n_groups: usize,
) -> Result<BatchGroupStats> {
    if sample_losses.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if sample_losses.len() != group_indices.len() {
        return Err(Error::Numeric(format!(
            "{} losses but {} group indices",
            sample_losses.len(),
            group_indices.len()
        )));
    }
    let mut sums = vec![0.0; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (&loss, &g) in sample_losses.iter().zip(group_indices) {
        if g >= n_groups {
            return Err(Error::Numeric(format!(
                "group index {g} out of range (n_groups = {n_groups})"
            )));
        }
        sums[g] += loss;
        counts[g] += 1;
    }
    let mut losses = vec![0.0; n_groups];
    let mut worst = None;
    for g in 0..n_groups {
        if counts[g] == 0 {
            continue;
        }
        losses[g] = sums[g] / counts[g] as f64;
        match worst {
            None => worst = Some(g),
            Some(w) if losses[g] > losses[w] => worst = Some(g),
            _ => {}
        }
    }
    Ok(BatchGroupStats {
        per_group_loss: losses,
        per_group_count: counts,
        worst_group: worst.expect("batch is non-empty"),
    })
}

/// Weighted sum of per-group losses, `sum_g p_g * l_g`. Weight mass on a
/// group absent from the batch is an error.
pub fn group_average_loss(stats: &BatchGroupStats, p: &GroupWeights) -> Result<f64> {
    if p.len() != stats.n_groups() {
        return Err(Error::Config(format!(
            "{} weights for {} groups",
            p.len(),
            stats.n_groups()
        )));
    }
    let mut total = 0.0;
    for g in 0..stats.n_groups() {
        let w = p.get(g);
        if stats.per_group_count[g] == 0 {
            if w > 0.0 {
                return Err(Error::WeightOnEmptyGroup(g));
            }
            continue;
        }
        total += w * stats.per_group_loss[g];
    }
    Ok(total)
}

/// Worst-case group loss: `max_g l_g` over non-empty groups.
pub fn dro_loss(stats: &BatchGroupStats) -> f64 {
    stats.per_group_loss[stats.worst_group]
}

/// Exponentiated-gradient update of the group weights:
/// `q'_g  proportional to  q_g * exp(eta_q * l_g)` for non-empty groups,
/// with empty groups keeping their weight up to renormalization. The max
/// exponent is subtracted before exponentiating to guard against overflow.
pub fn groupdro_update(q: &GroupWeights, stats: &BatchGroupStats, eta_q: f64) -> Result<GroupWeights> {
    if eta_q < 0.0 || !eta_q.is_finite() {
        return Err(Error::Config(format!(
            "eta_q must be a nonnegative finite real, got {eta_q}"
        )));
    }
    if q.len() != stats.n_groups() {
        return Err(Error::Config(format!(
            "{} weights for {} groups",
            q.len(),
            stats.n_groups()
        )));
    }
    let exponents: Vec<f64> = (0..q.len())
        .map(|g| {
            if stats.per_group_count[g] > 0 {
                eta_q * stats.per_group_loss[g]
            } else {
                0.0
            }
        })
        .collect();
    let max_exp = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut next: Vec<f64> = q
        .as_slice()
        .iter()
        .zip(&exponents)
        .map(|(&qg, &e)| qg * (e - max_exp).exp())
        .collect();
    let sum: f64 = next.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::Numeric(
            "group weight update collapsed to zero mass".into(),
        ));
    }
    for v in next.iter_mut() {
        *v /= sum;
    }
    Ok(GroupWeights { q: next })
}

/// Per-sample weights for buffer upweighting: `lambda_up` on buffer samples,
/// 1 elsewhere.
pub fn jtt_weights(n: usize, buffer_mask: &[bool], lambda_up: f64) -> Result<Vec<f64>> {
    if buffer_mask.len() != n {
        return Err(Error::Config(format!(
            "mask length {} does not match batch size {n}",
            buffer_mask.len()
        )));
    }
    if !(lambda_up >= 1.0) {
        return Err(Error::Config(format!(
            "lambda_up must be >= 1, got {lambda_up}"
        )));
    }
    Ok(buffer_mask
        .iter()
        .map(|&in_buffer| if in_buffer { lambda_up } else { 1.0 })
        .collect())
}

/// Weight for a sample mixed between group `g` and the worst group `wg`,
/// where `alpha` is the interpolation coefficient on the `g` endpoint:
/// `q_g` when the mix sits closer to `g` (alpha > 0.5), `q_wg` otherwise.
/// The tie at alpha == 0.5 goes to the worst group.
pub fn groupjm1_weight(q: &GroupWeights, g: usize, wg: usize, alpha: f64) -> f64 {
    debug_assert!(g != wg, "mixing a group with itself");
    if alpha > 0.5 {
        q.get(g)
    } else {
        q.get(wg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats(losses: &[f64], groups: &[usize], n: usize) -> BatchGroupStats {
        per_group_losses(losses, groups, n).unwrap()
    }

    #[test]
    fn single_group_mean() {
        let s = stats(&[1.0, 3.0], &[0, 0], 1);
        assert_eq!(s.per_group_loss, vec![2.0]);
        assert_eq!(s.worst_group, 0);
    }

    #[test]
    fn two_group_means_and_worst() {
        let s = stats(&[1.0, 2.0, 3.0, 4.0], &[0, 0, 1, 1], 2);
        assert_eq!(s.per_group_loss, vec![1.5, 3.5]);
        assert_eq!(s.per_group_count, vec![2, 2]);
        assert_eq!(s.worst_group, 1);
    }

    #[test]
    fn one_sample_per_group_collapses_to_sample_losses() {
        let losses = [0.3, 1.7, 0.9];
        let s = stats(&losses, &[0, 1, 2], 3);
        assert_eq!(s.per_group_loss, losses.to_vec());
        // Uniform group weights then give exactly the ERM mean.
        let erm = group_average_loss(&s, &GroupWeights::uniform(3)).unwrap();
        let mean = losses.iter().sum::<f64>() / 3.0;
        assert!((erm - mean).abs() < 1e-12);
    }

    #[test]
    fn absent_groups_are_excluded_from_argmax() {
        let s = stats(&[0.5], &[1], 3);
        assert_eq!(s.per_group_count, vec![0, 1, 0]);
        assert_eq!(s.worst_group, 1);
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert!(matches!(
            per_group_losses(&[], &[], 2),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn group_average_uniform_and_dirac() {
        let s = stats(&[2.0, 4.0], &[0, 1], 2);
        let avg = group_average_loss(&s, &GroupWeights::uniform(2)).unwrap();
        assert!((avg - 3.0).abs() < 1e-12);
        let dirac = GroupWeights::new(vec![0.0, 1.0]).unwrap();
        let on_b = group_average_loss(&s, &dirac).unwrap();
        assert!((on_b - 4.0).abs() < 1e-12);
        // The DRO loss equals the group average under the Dirac on the worst group.
        assert!((dro_loss(&s) - on_b).abs() < 1e-12);
    }

    #[test]
    fn weight_mass_on_empty_group_is_an_error() {
        let s = stats(&[2.0], &[0], 2);
        let p = GroupWeights::new(vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            group_average_loss(&s, &p),
            Err(Error::WeightOnEmptyGroup(1))
        ));
    }

    #[test]
    fn dro_loss_is_the_max() {
        let s = stats(&[2.0, 4.0], &[0, 1], 2);
        assert_eq!(dro_loss(&s), 4.0);
        let single = stats(&[0.7, 0.9], &[0, 0], 1);
        assert!((dro_loss(&single) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn groupdro_update_equal_losses_is_identity() {
        let q = GroupWeights::new(vec![0.3, 0.7]).unwrap();
        let s = stats(&[1.2, 1.2], &[0, 1], 2);
        let next = groupdro_update(&q, &s, 1.0).unwrap();
        assert!((next.get(0) - 0.3).abs() < 1e-12);
        assert!((next.get(1) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn groupdro_update_hand_example() {
        let q = GroupWeights::new(vec![0.5, 0.5]).unwrap();
        let s = stats(&[0.0, 3.0f64.ln()], &[0, 1], 2);
        let next = groupdro_update(&q, &s, 1.0).unwrap();
        assert!((next.get(0) - 0.25).abs() < 1e-12);
        assert!((next.get(1) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn repeated_updates_converge_to_dirac_on_strict_max() {
        let mut q = GroupWeights::uniform(3);
        let s = stats(&[0.1, 0.5, 0.9], &[0, 1, 2], 3);
        for _ in 0..2000 {
            q = groupdro_update(&q, &s, 0.05).unwrap();
        }
        assert!(q.get(2) > 1.0 - 1e-6);
    }

    #[test]
    fn groupdro_update_is_shift_invariant() {
        let q = GroupWeights::new(vec![0.2, 0.5, 0.3]).unwrap();
        let a = stats(&[0.4, 1.1, 0.9], &[0, 1, 2], 3);
        let shifted: Vec<f64> = a.per_group_loss.iter().map(|l| l + 7.5).collect();
        let b = stats(&shifted, &[0, 1, 2], 3);
        let qa = groupdro_update(&q, &a, 0.3).unwrap();
        let qb = groupdro_update(&q, &b, 0.3).unwrap();
        for g in 0..3 {
            assert!((qa.get(g) - qb.get(g)).abs() < 1e-12);
        }
    }

    #[test]
    fn monotone_ratio_after_one_update() {
        let q = GroupWeights::new(vec![0.6, 0.4]).unwrap();
        let s = stats(&[2.0, 1.0], &[0, 1], 2);
        let next = groupdro_update(&q, &s, 0.01).unwrap();
        assert!(next.get(0) / next.get(1) > q.get(0) / q.get(1));
    }

    #[test]
    fn empty_group_gets_unit_factor() {
        let q = GroupWeights::new(vec![0.25, 0.25, 0.5]).unwrap();
        let s = stats(&[1.0, 1.0], &[0, 1], 3);
        let next = groupdro_update(&q, &s, 1.0).unwrap();
        // Present groups are scaled by e^1, the absent group by e^0 = 1,
        // then everything renormalizes.
        let e = std::f64::consts::E;
        let expected_ratio = 0.5 / (0.25 * e);
        assert!((next.get(2) / next.get(0) - expected_ratio).abs() < 1e-12);
        assert!((next.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jtt_weights_definition_and_degenerate_lambda() {
        assert_eq!(jtt_weights(3, &[false, false, false], 1.0).unwrap(), vec![1.0; 3]);
        assert_eq!(
            jtt_weights(3, &[true, false, false], 4.0).unwrap(),
            vec![4.0, 1.0, 1.0]
        );
        assert!(matches!(
            jtt_weights(2, &[true, false], 0.5),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn groupjm1_weight_rule_and_tie() {
        let q = GroupWeights::new(vec![0.2, 0.8]).unwrap();
        assert_eq!(groupjm1_weight(&q, 0, 1, 0.9), 0.2);
        assert_eq!(groupjm1_weight(&q, 0, 1, 0.1), 0.8);
        assert_eq!(groupjm1_weight(&q, 0, 1, 0.5), 0.8);
    }

    #[test]
    fn scale_covariance_of_group_losses() {
        let losses = [0.2, 1.4, 0.6, 0.9];
        let groups = [0, 1, 0, 1];
        let s1 = stats(&losses, &groups, 2);
        let scaled: Vec<f64> = losses.iter().map(|l| 3.0 * l).collect();
        let s3 = stats(&scaled, &groups, 2);
        for g in 0..2 {
            assert!((s3.per_group_loss[g] - 3.0 * s1.per_group_loss[g]).abs() < 1e-12);
        }
        assert_eq!(s1.worst_group, s3.worst_group);
        assert!((dro_loss(&s3) - 3.0 * dro_loss(&s1)).abs() < 1e-12);
        let p = GroupWeights::uniform(2);
        let a1 = group_average_loss(&s1, &p).unwrap();
        let a3 = group_average_loss(&s3, &p).unwrap();
        assert!((a3 - 3.0 * a1).abs() < 1e-12);
    }

    #[test]
    fn worst_group_stable_under_monotone_linear_transform() {
        let losses = [0.2, 1.4, 0.6, 0.9, 1.1];
        let groups = [0, 1, 0, 2, 2];
        let s = stats(&losses, &groups, 3);
        let mapped: Vec<f64> = losses.iter().map(|l| 2.5 * l + 0.3).collect();
        let sm = stats(&mapped, &groups, 3);
        assert_eq!(s.worst_group, sm.worst_group);
    }

    proptest! {
        #[test]
        fn groupdro_update_preserves_the_simplex(
            raw in prop::collection::vec(0.01f64..10.0, 2..6),
            losses in prop::collection::vec(0.0f64..20.0, 2..6),
            eta in 0.0f64..2.0,
        ) {
            let n = raw.len().min(losses.len());
            let total: f64 = raw[..n].iter().sum();
            let q = GroupWeights::new(raw[..n].iter().map(|v| v / total).collect()).unwrap();
            let groups: Vec<usize> = (0..n).collect();
            let s = per_group_losses(&losses[..n], &groups, n).unwrap();
            let next = groupdro_update(&q, &s, eta).unwrap();
            let sum: f64 = next.as_slice().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(next.as_slice().iter().all(|&v| v >= 0.0));
        }
    }
}
