//! Per-group evaluation, the interpolated-group moment check, and decision
//! boundary export.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, GroupId};
use crate::error::{Error, Result};
use crate::identify::IdentificationQuality;
use crate::nn::Mlp;
use crate::rng::stream;

/// Per-group and aggregate accuracy on one dataset.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    /// Accuracy per group in lexicographic group order.
    pub per_group_accuracy: Vec<(GroupId, f64)>,
    pub n_per_group: Vec<(GroupId, usize)>,
    /// Sample-weighted accuracy: correct / total.
    pub average_accuracy: f64,
    /// Unweighted mean of the per-group accuracies.
    pub group_weighted_accuracy: f64,
    /// Minimum per-group accuracy.
    pub worst_group_accuracy: f64,
    pub identification_quality: Option<IdentificationQuality>,
}

/// Evaluate a model with the privileged group view (held-out evaluation is
/// always allowed to see groups). Errors if any declared group is absent.
pub fn evaluate(model: &Mlp, ds: &Dataset) -> Result<MetricsReport> {
    let inputs: Vec<Vec<f64>> = (0..ds.len()).map(|i| ds.features(i).to_vec()).collect();
    let predictions = model.predict_classes(&inputs)?;
    let view = ds.privileged();
    let groups = ds.groups();
    let mut correct = vec![0usize; groups.len()];
    let mut count = vec![0usize; groups.len()];
    let mut total_correct = 0usize;
    for i in 0..ds.len() {
        let g = ds.group_index(view.group_of(i));
        count[g] += 1;
        if predictions[i] == ds.label(i) {
            correct[g] += 1;
            total_correct += 1;
        }
    }
    if let Some(g) = count.iter().position(|&c| c == 0) {
        return Err(Error::Data(format!(
            "group {} has no samples in the {} split",
            groups[g],
            ds.split().as_str()
        )));
    }
    let per_group: Vec<(GroupId, f64)> = groups
        .iter()
        .zip(correct.iter().zip(&count))
        .map(|(&g, (&c, &n))| (g, c as f64 / n as f64))
        .collect();
    let worst = per_group
        .iter()
        .map(|&(_, a)| a)
        .fold(f64::INFINITY, f64::min);
    let group_weighted =
        per_group.iter().map(|&(_, a)| a).sum::<f64>() / per_group.len() as f64;
    Ok(MetricsReport {
        n_per_group: groups.iter().zip(&count).map(|(&g, &n)| (g, n)).collect(),
        per_group_accuracy: per_group,
        average_accuracy: total_correct as f64 / ds.len() as f64,
        group_weighted_accuracy: group_weighted,
        worst_group_accuracy: worst,
        identification_quality: None,
    })
}

/// Average and (when group labels are readable at the dataset's annotation
/// level) worst-group accuracy, through the *public* view. This is the
/// during-training selection metric; it never touches privileged state.
pub fn public_val_metrics(model: &Mlp, ds: &Dataset) -> Result<(f64, Option<f64>, Option<Vec<f64>>)> {
    let inputs: Vec<Vec<f64>> = (0..ds.len()).map(|i| ds.features(i).to_vec()).collect();
    let predictions = model.predict_classes(&inputs)?;
    let mut total_correct = 0usize;
    for i in 0..ds.len() {
        if predictions[i] == ds.label(i) {
            total_correct += 1;
        }
    }
    let avg = total_correct as f64 / ds.len() as f64;

    if ds.group_of(0).is_err() {
        return Ok((avg, None, None));
    }
    let n_groups = ds.n_groups();
    let mut correct = vec![0usize; n_groups];
    let mut count = vec![0usize; n_groups];
    for i in 0..ds.len() {
        let g = ds.group_index(ds.group_of(i)?);
        count[g] += 1;
        if predictions[i] == ds.label(i) {
            correct[g] += 1;
        }
    }
    let accs: Vec<f64> = correct
        .iter()
        .zip(&count)
        .map(|(&c, &n)| if n == 0 { f64::NAN } else { c as f64 / n as f64 })
        .collect();
    let worst = accs
        .iter()
        .cloned()
        .filter(|a| !a.is_nan())
        .fold(f64::INFINITY, f64::min);
    Ok((avg, Some(worst), Some(accs)))
}

/// Empirical vs predicted moments of a mixed sample
/// `h_mix = alpha * h + (1 - alpha) * h_bar` with Gaussian endpoints:
/// the mean should be the interpolated group mean and the per-coordinate
/// variance should shrink by `alpha^2 + (1 - alpha)^2`.
#[derive(Debug, Clone)]
pub struct TheoremCheckResult {
    pub alpha: f64,
    pub g_mean: Vec<f64>,
    pub gbar_mean: Vec<f64>,
    pub sigma: f64,
    pub n: usize,
    pub empirical_mean: Vec<f64>,
    pub empirical_var: Vec<f64>,
    pub predicted_mean: Vec<f64>,
    pub predicted_var: f64,
    /// Per-coordinate z-score of the empirical mean.
    pub mean_z: Vec<f64>,
    /// Per-coordinate z-score of the empirical variance.
    pub var_z: Vec<f64>,
}

impl TheoremCheckResult {
    pub fn max_abs_z(&self) -> f64 {
        self.mean_z
            .iter()
            .chain(self.var_z.iter())
            .fold(0.0f64, |m, z| m.max(z.abs()))
    }

    /// Variance matched within `k` standard errors of a sample variance.
    pub fn var_within_se(&self, k: f64) -> bool {
        self.var_z.iter().all(|z| z.abs() <= k)
    }
}

/// Draw `n` endpoint pairs from `N(g, sigma^2 I)` and `N(gbar, sigma^2 I)`,
/// mix with fixed `alpha` (coefficient on the `g` endpoint), and compare
/// empirical moments against the interpolated-group prediction.
pub fn theorem_check(
    g_mean: &[f64],
    gbar_mean: &[f64],
    sigma: f64,
    alpha: f64,
    n: usize,
    seed: u64,
) -> Result<TheoremCheckResult> {
    if g_mean.len() != gbar_mean.len() || g_mean.is_empty() {
        return Err(Error::Config("group means must share a positive dimension".into()));
    }
    if n < 10_000 {
        return Err(Error::Config(format!(
            "moment check needs n >= 10000, got {n}"
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0,1], got {alpha}")));
    }
    let dim = g_mean.len();
    let mut rng = stream(seed, "theorem", &[(alpha * 1e6) as u64, (sigma * 1e6) as u64]);
    let noise = Normal::new(0.0, sigma).expect("sigma > 0");
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    for _ in 0..n {
        for d in 0..dim {
            let h = g_mean[d] + noise.sample(&mut rng);
            let h_bar = gbar_mean[d] + noise.sample(&mut rng);
            let mixed = alpha * h + (1.0 - alpha) * h_bar;
            sum[d] += mixed;
            sum_sq[d] += mixed * mixed;
        }
    }
    let nf = n as f64;
    let empirical_mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let empirical_var: Vec<f64> = sum_sq
        .iter()
        .zip(&empirical_mean)
        .map(|(ss, m)| (ss - nf * m * m) / (nf - 1.0))
        .collect();
    let predicted_mean: Vec<f64> = g_mean
        .iter()
        .zip(gbar_mean)
        .map(|(&g, &gb)| alpha * g + (1.0 - alpha) * gb)
        .collect();
    let var_factor = alpha * alpha + (1.0 - alpha) * (1.0 - alpha);
    let predicted_var = var_factor * sigma * sigma;
    debug_assert!(predicted_var <= sigma * sigma + 1e-15);
    let mean_se = (predicted_var / nf).sqrt();
    let var_se = predicted_var * (2.0 / (nf - 1.0)).sqrt();
    let mean_z: Vec<f64> = empirical_mean
        .iter()
        .zip(&predicted_mean)
        .map(|(e, p)| (e - p) / mean_se)
        .collect();
    let var_z: Vec<f64> = empirical_var
        .iter()
        .map(|e| (e - predicted_var) / var_se)
        .collect();
    Ok(TheoremCheckResult {
        alpha,
        g_mean: g_mean.to_vec(),
        gbar_mean: gbar_mean.to_vec(),
        sigma,
        n,
        empirical_mean,
        empirical_var,
        predicted_mean,
        predicted_var,
        mean_z,
        var_z,
    })
}

/// Confounder pushforward check: with `alpha ~ U(0,1)` the interpolated
/// confounder `alpha * c + (1 - alpha) * c_bar` has a known quantile
/// function. Returns the maximum gap between empirical and analytic
/// quantiles over the 1%..99% grid.
pub fn corollary_pushforward_gap(c: f64, c_bar: f64, n: usize, seed: u64) -> Result<f64> {
    if n < 10_000 {
        return Err(Error::Config(format!(
            "pushforward check needs n >= 10000, got {n}"
        )));
    }
    let mut rng = stream(seed, "pushforward", &[]);
    let mut mixed: Vec<f64> = (0..n)
        .map(|_| {
            let alpha: f64 = rng.random_range(0.0..1.0);
            alpha * c + (1.0 - alpha) * c_bar
        })
        .collect();
    mixed.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let span = c - c_bar;
    let mut max_gap = 0.0f64;
    for pct in 1..=99 {
        let p = pct as f64 / 100.0;
        let idx = ((n - 1) as f64 * p).round() as usize;
        let empirical = mixed[idx];
        let analytic = if span >= 0.0 {
            c_bar + span * p
        } else {
            c_bar + span * (1.0 - p)
        };
        max_gap = max_gap.max((empirical - analytic).abs());
    }
    Ok(max_gap)
}

/// Rectangle over which a decision boundary is sampled.
#[derive(Debug, Clone, Copy)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

/// Predicted class per grid cell center, row-major from the bottom row up.
#[derive(Debug, Clone)]
pub struct BoundaryGrid {
    pub nx: usize,
    pub ny: usize,
    pub points: Vec<(f64, f64, usize)>,
}

impl BoundaryGrid {
    /// Serialize as `x1,x2,class` CSV rows.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("x1,x2,class\n");
        for &(x1, x2, class) in &self.points {
            out.push_str(&format!(
                "{},{},{}\n",
                crate::textfmt::fmt_sig(x1, 9),
                crate::textfmt::fmt_sig(x2, 9),
                class
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Sample a 2-input model's predicted class over a regular grid of cell
/// centers.
pub fn export_boundary(model: &Mlp, bounds: Bounds, nx: usize, ny: usize) -> Result<BoundaryGrid> {
    if model.input_dim() != 2 {
        return Err(Error::Config(format!(
            "boundary export requires a 2-input model, got input dim {}",
            model.input_dim()
        )));
    }
    if nx == 0 || ny == 0 {
        return Err(Error::Config("grid resolution must be positive".into()));
    }
    let dx = (bounds.x_max - bounds.x_min) / nx as f64;
    let dy = (bounds.y_max - bounds.y_min) / ny as f64;
    let mut inputs = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let x1 = bounds.x_min + (ix as f64 + 0.5) * dx;
            let x2 = bounds.y_min + (iy as f64 + 0.5) * dy;
            inputs.push(vec![x1, x2]);
        }
    }
    let classes = model.predict_classes(&inputs)?;
    Ok(BoundaryGrid {
        nx,
        ny,
        points: inputs
            .iter()
            .zip(&classes)
            .map(|(p, &cl)| (p[0], p[1], cl))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_gaussian_groups, AnnotationLevel, GroupSpec, Split};
    use crate::nn::{Activation, LayerSpec, Mlp};

    fn toy_specs() -> Vec<GroupSpec> {
        let mut specs = Vec::new();
        for c in 0..2usize {
            for y in 0..2usize {
                specs.push(GroupSpec {
                    c,
                    y,
                    train_proportion: if c != y { 0.025 } else { 0.475 },
                    test_proportion: 0.25,
                    mean: vec![c as f64, y as f64],
                    sigma: 0.05,
                });
            }
        }
        specs
    }

    /// A linear model classifying on the second coordinate: class 1 iff x2 > 0.5.
    fn horizontal_model() -> Mlp {
        Mlp::from_parts(
            vec![LayerSpec::new(2, 2, Activation::Identity)],
            vec![vec![0.0, 0.0, 0.0, 1.0]],
            vec![vec![0.0, -0.5]],
        )
        .unwrap()
    }

    #[test]
    fn perfect_classifier_scores_one_everywhere() {
        let ds = gen_gaussian_groups(
            &toy_specs(),
            400,
            Split::Test,
            AnnotationLevel::FineGrained,
            0,
        )
        .unwrap();
        let report = evaluate(&horizontal_model(), &ds).unwrap();
        assert_eq!(report.worst_group_accuracy, 1.0);
        assert_eq!(report.average_accuracy, 1.0);
        for &(_, a) in &report.per_group_accuracy {
            assert_eq!(a, 1.0);
        }
    }

    #[test]
    fn constant_classifier_has_zero_worst_group() {
        // Biased toward class 0 regardless of input.
        let model = Mlp::from_parts(
            vec![LayerSpec::new(2, 2, Activation::Identity)],
            vec![vec![0.0; 4]],
            vec![vec![1.0, 0.0]],
        )
        .unwrap();
        let ds = gen_gaussian_groups(
            &toy_specs(),
            400,
            Split::Test,
            AnnotationLevel::FineGrained,
            0,
        )
        .unwrap();
        let report = evaluate(&model, &ds).unwrap();
        assert_eq!(report.worst_group_accuracy, 0.0);
        assert!((report.average_accuracy - 0.5).abs() < 1e-12);
    }

    #[test]
    fn per_group_values_match_brute_force_recount() {
        let ds = gen_gaussian_groups(
            &toy_specs(),
            397,
            Split::Test,
            AnnotationLevel::FineGrained,
            3,
        )
        .unwrap();
        let model = horizontal_model();
        let report = evaluate(&model, &ds).unwrap();

        // Independent recount straight from predictions and privileged truth.
        let view = ds.privileged();
        for (g, acc) in &report.per_group_accuracy {
            let mut correct = 0usize;
            let mut count = 0usize;
            for i in 0..ds.len() {
                if view.group_of(i) == *g {
                    count += 1;
                    let inputs = vec![ds.features(i).to_vec()];
                    let pred = model.predict_classes(&inputs).unwrap()[0];
                    if pred == ds.label(i) {
                        correct += 1;
                    }
                }
            }
            assert_eq!(*acc, correct as f64 / count as f64, "group {g}");
        }
        let min = report
            .per_group_accuracy
            .iter()
            .map(|&(_, a)| a)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(report.worst_group_accuracy, min);
        assert!(report.worst_group_accuracy <= report.group_weighted_accuracy + 1e-15);
    }

    #[test]
    fn theorem_check_predicted_variance() {
        let r = theorem_check(&[0.0, 1.0], &[1.0, 1.0], 1.0, 0.5, 10_000, 0).unwrap();
        assert!((r.predicted_var - 0.5).abs() < 1e-15);
        // alpha = 0.3 hand case: predicted mean (0.7, 1.0).
        let r = theorem_check(&[0.0, 1.0], &[1.0, 1.0], 0.25, 0.3, 10_000, 0).unwrap();
        assert!((r.predicted_mean[0] - 0.7).abs() < 1e-15);
        assert!((r.predicted_mean[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn theorem_check_alpha_one_matches_endpoint() {
        let r = theorem_check(&[0.0, 1.0], &[1.0, 1.0], 0.5, 1.0, 100_000, 7).unwrap();
        assert!((r.predicted_var - 0.25).abs() < 1e-15);
        assert!(r.max_abs_z() < 4.0, "z-scores {:?} {:?}", r.mean_z, r.var_z);
    }

    #[test]
    fn theorem_check_z_scores_are_small_across_alphas() {
        for &alpha in &[0.0, 0.25, 0.5, 0.75, 1.0] {
            let r = theorem_check(&[0.0, 1.0], &[1.0, 1.0], 0.25, alpha, 100_000, 42).unwrap();
            assert!(
                r.max_abs_z() < 5.0,
                "alpha {alpha}: mean_z {:?}, var_z {:?}",
                r.mean_z,
                r.var_z
            );
            assert!(r.predicted_var <= r.sigma * r.sigma + 1e-15);
        }
    }

    #[test]
    fn theorem_check_rejects_small_n_and_bad_sigma() {
        assert!(theorem_check(&[0.0], &[1.0], 1.0, 0.5, 100, 0).is_err());
        assert!(theorem_check(&[0.0], &[1.0], 0.0, 0.5, 10_000, 0).is_err());
    }

    #[test]
    fn moment_error_shrinks_with_n() {
        let mean_abs_err = |n: usize| {
            let r = theorem_check(&[0.0, 1.0], &[1.0, 1.0], 0.25, 0.5, n, 11).unwrap();
            let e_mean: f64 = r
                .empirical_mean
                .iter()
                .zip(&r.predicted_mean)
                .map(|(e, p)| (e - p).abs())
                .sum::<f64>()
                / 2.0;
            let se = (r.predicted_var / n as f64).sqrt();
            (e_mean, se)
        };
        let (e4, se4) = mean_abs_err(10_000);
        let (e5, _) = mean_abs_err(100_000);
        let (e6, _) = mean_abs_err(1_000_000);
        // 1/sqrt(n) decay within 3-SE bands.
        assert!(e5 <= e4 + 3.0 * se4, "e4 {e4}, e5 {e5}");
        assert!(e6 <= e4 + 3.0 * se4, "e4 {e4}, e6 {e6}");
        assert!(e6 < 3.0 * (se4 / 10.0) + 1e-4);
    }

    #[test]
    fn pushforward_quantiles_match_uniform_law() {
        // c = 0, c_bar = 1: the mix is 1 - alpha ~ U(0,1).
        let gap = corollary_pushforward_gap(0.0, 1.0, 1_000_000, 5).unwrap();
        assert!(gap < 0.01, "max quantile gap {gap}");
        let gap = corollary_pushforward_gap(1.0, 0.0, 1_000_000, 5).unwrap();
        assert!(gap < 0.01, "max quantile gap {gap}");
    }

    #[test]
    fn boundary_of_linear_model_sits_at_half() {
        let model = horizontal_model();
        let grid = export_boundary(
            &model,
            Bounds {
                x_min: -0.5,
                x_max: 1.5,
                y_min: -0.5,
                y_max: 1.5,
            },
            20,
            20,
        )
        .unwrap();
        for &(_, x2, class) in &grid.points {
            assert_eq!(class, usize::from(x2 > 0.5), "x2 = {x2}");
        }
    }

    #[test]
    fn grid_matches_pointwise_forward_calls() {
        let model = horizontal_model();
        let grid = export_boundary(
            &model,
            Bounds {
                x_min: -1.0,
                x_max: 1.0,
                y_min: -1.0,
                y_max: 1.0,
            },
            7,
            5,
        )
        .unwrap();
        assert_eq!(grid.points.len(), 35);
        for &(x1, x2, class) in &grid.points {
            let pred = model.predict_classes(&[vec![x1, x2]]).unwrap()[0];
            assert_eq!(class, pred);
        }
    }

    #[test]
    fn unit_grid_contains_origin_prediction() {
        let model = horizontal_model();
        let grid = export_boundary(
            &model,
            Bounds {
                x_min: -1.0,
                x_max: 1.0,
                y_min: -1.0,
                y_max: 1.0,
            },
            1,
            1,
        )
        .unwrap();
        assert_eq!(grid.points.len(), 1);
        let (x1, x2, class) = grid.points[0];
        assert_eq!((x1, x2), (0.0, 0.0));
        assert_eq!(class, model.predict_classes(&[vec![0.0, 0.0]]).unwrap()[0]);
    }

    #[test]
    fn non_planar_model_is_rejected() {
        let model = Mlp::zeros(vec![LayerSpec::new(3, 2, Activation::Identity)]).unwrap();
        let err = export_boundary(
            &model,
            Bounds {
                x_min: 0.0,
                x_max: 1.0,
                y_min: 0.0,
                y_max: 1.0,
            },
            4,
            4,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
