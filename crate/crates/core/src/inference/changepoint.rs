//! Bayesian change-point phase mapping by self-normalized importance
//! sampling from a uniform prior over the two change points.

use log::warn;
use rand::Rng;

use super::{
    change_point_summary, effective_sample_size, membership_on_grid, normalize_log_weights,
    ChangePointPosterior, InferenceParams, MembershipPosterior,
};
use crate::domain::{CompositionGrid, PhaseLabelSet, N_REGIONS};
use crate::error::InferenceError;

/// Below this many effective samples a posterior is flagged as unreliable.
pub const ESS_WARN_THRESHOLD: f64 = 50.0;

/// Region of `x` for sorted change points `c` (half-open intervals).
pub(crate) fn region_of(c: &[f64; 2], x: f64) -> usize {
    if x < c[0] {
        0
    } else if x < c[1] {
        1
    } else {
        2
    }
}

/// One-hot region membership of `x` given two change points in any order.
pub fn membership(c: (f64, f64), x: f64) -> [f64; N_REGIONS] {
    let sorted = if c.0 <= c.1 { [c.0, c.1] } else { [c.1, c.0] };
    let mut v = [0.0; N_REGIONS];
    v[region_of(&sorted, x)] = 1.0;
    v
}

/// Output of [`phase_map_infer`].
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMapPosterior {
    pub membership: MembershipPosterior,
    pub change_points: ChangePointPosterior,
    pub effective_sample_size: f64,
}

/// Draw sorted change-point pairs uniformly over `[lo, hi]`.
pub(crate) fn draw_change_points<R: Rng + ?Sized>(
    n: usize,
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| {
            let a = rng.random_range(lo..=hi);
            let b = rng.random_range(lo..=hi);
            if a <= b {
                [a, b]
            } else {
                [b, a]
            }
        })
        .collect()
}

/// Expected categorical log-likelihood of (possibly soft) labels under the
/// one-hot membership implied by `c`, with additive smoothing `eps`.
pub(crate) fn label_log_likelihood(labels: &PhaseLabelSet, c: &[f64; 2], eps: f64) -> f64 {
    let hit = (1.0 + eps).ln();
    let miss = eps.ln();
    labels
        .iter()
        .map(|(x, y)| {
            let r = region_of(c, x);
            (0..N_REGIONS)
                .map(|k| if k == r { y[k] * hit } else { y[k] * miss })
                .sum::<f64>()
        })
        .sum()
}

/// Posterior over phase membership on `grid` given structure labels.
///
/// An empty label set returns the prior.
pub fn phase_map_infer<R: Rng + ?Sized>(
    labels: &PhaseLabelSet,
    grid: &CompositionGrid,
    params: &InferenceParams,
    rng: &mut R,
) -> Result<PhaseMapPosterior, InferenceError> {
    params.validate()?;
    let pairs = draw_change_points(params.n_prior_samples, grid.start(), grid.stop(), rng);
    let logw: Vec<f64> = pairs
        .iter()
        .map(|c| label_log_likelihood(labels, c, params.label_smoothing))
        .collect();
    let weights = normalize_log_weights(&logw)?;
    let ess = effective_sample_size(&weights);
    if ess < ESS_WARN_THRESHOLD {
        warn!("phase-map posterior effective sample size {ess:.1} below {ESS_WARN_THRESHOLD}");
    }
    Ok(PhaseMapPosterior {
        membership: membership_on_grid(grid, &pairs, &weights),
        change_points: change_point_summary(&pairs, &weights),
        effective_sample_size: ess,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn entropy(row: &[f64; 3]) -> f64 {
        row.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum()
    }

    #[test]
    fn membership_examples() {
        assert_eq!(membership((30.0, 70.0), 10.0), [1.0, 0.0, 0.0]);
        assert_eq!(membership((70.0, 30.0), 80.0), [0.0, 0.0, 1.0]);
        assert_eq!(membership((50.0, 50.0), 50.0), [0.0, 0.0, 1.0]);
        assert_eq!(membership((30.0, 70.0), 30.0), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn no_labels_gives_prior_with_certain_endpoints() {
        let grid = CompositionGrid::standard();
        let mut rng = substream(4, "t", "pm");
        let post = phase_map_infer(
            &PhaseLabelSet::default(),
            &grid,
            &InferenceParams::default(),
            &mut rng,
        )
        .unwrap();
        let first = post.membership.probs[0];
        let last = post.membership.probs[100];
        assert!((first[0] - 1.0).abs() < 1e-9, "{first:?}");
        assert!((last[2] - 1.0).abs() < 1e-9, "{last:?}");
        // Direct Monte Carlo of the prior at x=50: P(region 1) = 2·0.5·0.5.
        let mid = post.membership.probs[50];
        assert!((mid[1] - 0.5).abs() < 0.05, "{mid:?}");
        assert!((post.effective_sample_size - 2000.0).abs() < 1e-6);
    }

    #[test]
    fn single_label_in_middle() {
        let grid = CompositionGrid::standard();
        let labels = PhaseLabelSet::from_hard(vec![50.0], &[1]).unwrap();
        let mut rng = substream(5, "t", "pm");
        let post = phase_map_infer(&labels, &grid, &InferenceParams::default(), &mut rng).unwrap();
        assert_eq!(post.membership.argmax_labels()[50], 1);
    }

    #[test]
    fn dense_labels_concentrate_and_boundaries_stay_uncertain() {
        let grid = CompositionGrid::standard();
        let xs: Vec<f64> = (0..20).map(|i| 5.0 * i as f64).collect();
        let regions: Vec<usize> = xs
            .iter()
            .map(|&x| if x < 35.0 { 0 } else if x < 62.0 { 1 } else { 2 })
            .collect();
        let labels = PhaseLabelSet::from_hard(xs, &regions).unwrap();
        let mut rng = substream(6, "t", "pm");
        let post = phase_map_infer(&labels, &grid, &InferenceParams::default(), &mut rng).unwrap();
        for (i, row) in post.membership.probs.iter().enumerate() {
            let x = i as f64;
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            if (x - 35.0).abs() >= 10.0 && (x - 62.0).abs() >= 10.0 {
                assert!(entropy(row) < 0.1, "x={x} {row:?}");
            }
        }
        let near = entropy(&post.membership.probs[33]);
        let far = entropy(&post.membership.probs[10]);
        assert!(near > far);
        assert!((post.change_points.means[0] - 35.0).abs() <= 5.0);
        assert!((post.change_points.means[1] - 62.0).abs() <= 5.0);
        assert!(post.change_points.means[0] <= post.change_points.means[1]);
    }

    #[test]
    fn soft_labels_reduce_to_hard_for_one_hot() {
        let hard = PhaseLabelSet::from_hard(vec![10.0, 60.0], &[0, 2]).unwrap();
        let soft = PhaseLabelSet::new(vec![10.0, 60.0], vec![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
            .unwrap();
        let c = [30.0, 50.0];
        assert_eq!(
            label_log_likelihood(&hard, &c, 1e-6),
            label_log_likelihood(&soft, &c, 1e-6)
        );
        // A uniform soft label carries no information about c.
        let flat = PhaseLabelSet::new(vec![40.0], vec![[1.0 / 3.0; 3]]).unwrap();
        let a = label_log_likelihood(&flat, &[10.0, 20.0], 1e-6);
        let b = label_log_likelihood(&flat, &[50.0, 90.0], 1e-6);
        assert!((a - b).abs() < 1e-12);
    }
}
