//! Joint phase-map / functional-property model.
//!
//! Each importance draw samples two change points, an RBF length scale and
//! signal sd per region, and one noise sd shared by all regions. The draw's
//! weight combines the structure-label likelihood with the marginal
//! likelihood of the property data under the piecewise GP that the change
//! points define. A systematic resample of the draws is then turned into
//! function samples on the grid, whose pointwise mean and sd form the
//! property posterior.

use log::warn;
use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::changepoint::{draw_change_points, label_log_likelihood, region_of, ESS_WARN_THRESHOLD};
use super::gp::{cholesky_escalating, cross_covariance, GpHyper, GpModel, KernelKind};
use super::{
    change_point_summary, effective_sample_size, membership_on_grid, normalize_log_weights,
    ChangePointPosterior, InferenceParams, MembershipPosterior, PropertyPosterior,
};
use crate::domain::{CompositionGrid, PhaseLabelSet, N_REGIONS};
use crate::error::InferenceError;

/// Fraction of draws that may fail numerically before inference gives up.
const MAX_DISCARD_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Draw {
    change_points: [f64; 2],
    length_scale: [f64; N_REGIONS],
    signal_sd: [f64; N_REGIONS],
    noise_sd: f64,
}

impl Draw {
    fn hyper(&self, region: usize) -> GpHyper {
        GpHyper {
            length_scale: self.length_scale[region],
            signal_sd: self.signal_sd[region],
            noise_sd: self.noise_sd,
        }
    }
}

/// Output of [`coregional_infer`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoregionalPosterior {
    pub membership: MembershipPosterior,
    pub change_points: ChangePointPosterior,
    pub property: PropertyPosterior,
    pub effective_sample_size: f64,
    /// Posterior-mean RBF hyperparameters per region (noise shared).
    pub region_hyper: [GpHyper; N_REGIONS],
    pub discarded: usize,
}

fn split_by_region(c: &[f64; 2], x: &[f64], y: &[f64]) -> [(Vec<f64>, Vec<f64>); N_REGIONS] {
    let mut out: [(Vec<f64>, Vec<f64>); N_REGIONS] = Default::default();
    for (&xi, &yi) in x.iter().zip(y) {
        let r = region_of(c, xi);
        out[r].0.push(xi);
        out[r].1.push(yi);
    }
    out
}

fn property_log_likelihood(draw: &Draw, x: &[f64], y: &[f64], jitter: f64) -> f64 {
    let mut total = 0.0;
    for (r, (xr, yr)) in split_by_region(&draw.change_points, x, y).iter().enumerate() {
        if xr.is_empty() {
            continue;
        }
        match GpModel::new(KernelKind::Rbf, xr, yr, draw.hyper(r), jitter) {
            Ok(m) => total += m.log_marginal_likelihood(),
            Err(_) => return f64::NEG_INFINITY,
        }
    }
    total
}

/// Draw `count` joint function samples on `grid` from the piecewise GP of
/// `draw`, each region conditioned only on its own data.
fn sample_functions<R: Rng + ?Sized>(
    draw: &Draw,
    grid: &CompositionGrid,
    x: &[f64],
    y: &[f64],
    count: usize,
    jitter: f64,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, InferenceError> {
    let mut samples = vec![vec![0.0; grid.len()]; count];
    let data = split_by_region(&draw.change_points, x, y);
    for (r, (xr, yr)) in data.iter().enumerate() {
        let idx: Vec<usize> = (0..grid.len())
            .filter(|&i| region_of(&draw.change_points, grid.points()[i]) == r)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let gx: Vec<f64> = idx.iter().map(|&i| grid.points()[i]).collect();
        let hyper = draw.hyper(r);
        let (mean, cov) = if xr.is_empty() {
            (
                DVector::zeros(gx.len()),
                cross_covariance(KernelKind::Rbf, &gx, &gx, &hyper),
            )
        } else {
            GpModel::new(KernelKind::Rbf, xr, yr, hyper, jitter)?.posterior_joint(&gx)
        };
        // Symmetrize away rounding before factoring.
        let mut cov = (&cov + cov.transpose()) * 0.5;
        for i in 0..cov.nrows() {
            cov[(i, i)] += jitter;
        }
        let (chol, _) = cholesky_escalating(&cov, jitter)?;
        let l = chol.l();
        for s in samples.iter_mut() {
            let z = DVector::from_fn(gx.len(), |_, _| StandardNormal.sample(rng));
            let f = &mean + &l * z;
            for (k, &i) in idx.iter().enumerate() {
                s[i] = f[k];
            }
        }
    }
    Ok(samples)
}

/// Systematic resampling of `count` indices proportional to `weights`.
fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let step = 1.0 / count as f64;
    let u0 = rng.random::<f64>() * step;
    let mut out = Vec::with_capacity(count);
    let mut cum = weights[0];
    let mut i = 0;
    for j in 0..count {
        let target = u0 + j as f64 * step;
        while target > cum && i + 1 < weights.len() {
            i += 1;
            cum += weights[i];
        }
        out.push(i);
    }
    out
}

/// Joint posterior over phase membership, change points and the
/// functional property given structure labels and property data
/// `(x_f, y_f)`. Either input may be empty, in which case it contributes no
/// likelihood.
pub fn coregional_infer<R: Rng + ?Sized>(
    labels: &PhaseLabelSet,
    x_f: &[f64],
    y_f: &[f64],
    grid: &CompositionGrid,
    params: &InferenceParams,
    rng: &mut R,
) -> Result<CoregionalPosterior, InferenceError> {
    params.validate()?;
    if x_f.len() != y_f.len() {
        return Err(InferenceError::LengthMismatch(x_f.len(), y_f.len()));
    }
    let n = params.n_prior_samples;
    let pairs = draw_change_points(n, grid.start(), grid.stop(), rng);
    let (l_lo, l_hi) = params.coregion_length_scale;
    let (s_lo, s_hi) = params.coregion_signal_sd;
    let (n_lo, n_hi) = params.coregion_noise_sd;
    let draws: Vec<Draw> = pairs
        .iter()
        .map(|&c| {
            let length_scale = [(); N_REGIONS].map(|_| rng.random_range(l_lo..=l_hi));
            let signal_sd = [(); N_REGIONS].map(|_| rng.random_range(s_lo..=s_hi));
            Draw {
                change_points: c,
                length_scale,
                signal_sd,
                noise_sd: rng.random_range(n_lo..=n_hi),
            }
        })
        .collect();

    let mut discarded = 0;
    let logw: Vec<f64> = draws
        .iter()
        .map(|d| {
            let lf = property_log_likelihood(d, x_f, y_f, params.jitter);
            if lf == f64::NEG_INFINITY {
                discarded += 1;
                return f64::NEG_INFINITY;
            }
            label_log_likelihood(labels, &d.change_points, params.label_smoothing) + lf
        })
        .collect();
    if discarded as f64 > MAX_DISCARD_FRACTION * n as f64 {
        return Err(InferenceError::TooManyDiscarded {
            discarded,
            total: n,
        });
    }
    let weights = normalize_log_weights(&logw)?;
    let ess = effective_sample_size(&weights);
    if ess < ESS_WARN_THRESHOLD {
        warn!("coregional posterior effective sample size {ess:.1} below {ESS_WARN_THRESHOLD}");
    }

    let mut region_hyper = [GpHyper {
        length_scale: 0.0,
        signal_sd: 0.0,
        noise_sd: 0.0,
    }; N_REGIONS];
    for (d, &w) in draws.iter().zip(&weights) {
        for (r, h) in region_hyper.iter_mut().enumerate() {
            h.length_scale += w * d.length_scale[r];
            h.signal_sd += w * d.signal_sd[r];
            h.noise_sd += w * d.noise_sd;
        }
    }

    let chosen = systematic_resample(&weights, params.n_resampled, rng);
    let mut functions: Vec<Vec<f64>> = Vec::new();
    let mut failed = 0;
    for &i in &chosen {
        match sample_functions(
            &draws[i],
            grid,
            x_f,
            y_f,
            params.subsamples_per_draw,
            params.jitter,
            rng,
        ) {
            Ok(f) => functions.extend(f),
            Err(_) => failed += 1,
        }
    }
    if functions.is_empty() {
        return Err(InferenceError::TooManyDiscarded {
            discarded: failed,
            total: chosen.len(),
        });
    }
    let m = functions.len() as f64;
    let mut mean = vec![0.0; grid.len()];
    for f in &functions {
        for (acc, v) in mean.iter_mut().zip(f) {
            *acc += v / m;
        }
    }
    let mut var = vec![0.0; grid.len()];
    for f in &functions {
        for ((acc, v), mu) in var.iter_mut().zip(f).zip(&mean) {
            *acc += (v - mu).powi(2);
        }
    }
    let denom = (m - 1.0).max(1.0);
    let sd = var.into_iter().map(|v| (v / denom).sqrt()).collect();

    Ok(CoregionalPosterior {
        membership: membership_on_grid(grid, &pairs, &weights),
        change_points: change_point_summary(&pairs, &weights),
        property: PropertyPosterior {
            grid: grid.clone(),
            mean,
            sd,
        },
        effective_sample_size: ess,
        region_hyper,
        discarded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn systematic_resampling_follows_weights() {
        let mut rng = substream(1, "t", "rs");
        let idx = systematic_resample(&[0.0, 0.5, 0.0, 0.5], 10, &mut rng);
        assert_eq!(idx.iter().filter(|&&i| i == 1).count(), 5);
        assert_eq!(idx.iter().filter(|&&i| i == 3).count(), 5);
        assert!(idx.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn empty_property_data_is_prior_dominated() {
        let grid = CompositionGrid::standard();
        let labels = PhaseLabelSet::from_hard(vec![20.0, 50.0, 80.0], &[0, 1, 2]).unwrap();
        let mut rng = substream(2, "t", "co");
        let post = coregional_infer(&labels, &[], &[], &grid, &InferenceParams::default(), &mut rng)
            .unwrap();
        assert!(post.property.sd.iter().all(|&s| s >= 1.0), "{:?}", post.property.sd);
        for row in &post.membership.probs {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn step_function_locates_boundary() {
        let grid = CompositionGrid::standard();
        let xs: Vec<f64> = (0..20).map(|i| 2.5 + 5.0 * i as f64).collect();
        let regions: Vec<usize> = xs
            .iter()
            .map(|&x| if x < 25.0 { 0 } else if x < 50.0 { 1 } else { 2 })
            .collect();
        let labels = PhaseLabelSet::from_hard(xs.clone(), &regions).unwrap();
        let y: Vec<f64> = xs.iter().map(|&x| if x < 50.0 { 0.0 } else { 10.0 }).collect();
        let mut rng = substream(3, "t", "co");
        let post =
            coregional_infer(&labels, &xs, &y, &grid, &InferenceParams::default(), &mut rng).unwrap();
        let near = post
            .change_points
            .means
            .iter()
            .any(|m| (m - 50.0).abs() <= 5.0);
        assert!(near, "{:?}", post.change_points);
    }

    fn single_gp_mean(
        x: &[f64],
        y: &[f64],
        hyper: GpHyper,
        at: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        GpModel::new(KernelKind::Rbf, x, y, hyper, 1e-6)
            .unwrap()
            .predict(at)
    }

    #[test]
    fn one_region_of_data_matches_plain_gp() {
        let grid = CompositionGrid::standard();
        let lx: Vec<f64> = (0..20).map(|i| 5.0 * i as f64).collect();
        let regions: Vec<usize> = lx
            .iter()
            .map(|&x| if x < 35.0 { 0 } else if x < 62.0 { 1 } else { 2 })
            .collect();
        let labels = PhaseLabelSet::from_hard(lx, &regions).unwrap();
        let xf: Vec<f64> = (0..7).map(|i| 66.0 + 5.0 * i as f64).collect();
        let yf: Vec<f64> = xf.iter().map(|&x| 5.0 * ((x - 66.0) / 8.0).sin()).collect();
        let mut rng = substream(5, "t", "co");
        let post =
            coregional_infer(&labels, &xf, &yf, &grid, &InferenceParams::default(), &mut rng).unwrap();
        let inside: Vec<f64> = grid.points().iter().copied().filter(|&x| x >= 66.0).collect();
        let (mean, sd) = single_gp_mean(&xf, &yf, post.region_hyper[2], &inside);
        for (k, &x) in inside.iter().enumerate() {
            let i = grid.index_of(crate::domain::Composition(x)).unwrap();
            let pooled = (post.property.sd[i].powi(2) + sd[k].powi(2)).sqrt();
            let diff = (post.property.mean[i] - mean[k]).abs();
            assert!(diff <= 2.0 * pooled + 1e-9, "x={x}: {diff} vs {pooled}");
        }
    }

    #[test]
    fn single_label_region_reduces_to_plain_gp() {
        let grid = CompositionGrid::standard();
        let lx: Vec<f64> = (0..17).map(|i| 10.0 + 5.0 * i as f64).collect();
        let labels = PhaseLabelSet::from_hard(lx.clone(), &vec![1; lx.len()]).unwrap();
        let xf: Vec<f64> = (0..9).map(|i| 10.0 + 10.0 * i as f64).collect();
        let yf: Vec<f64> = xf.iter().map(|&x| 4.0 * (x / 15.0).sin()).collect();
        let mut rng = substream(6, "t", "co");
        let post =
            coregional_infer(&labels, &xf, &yf, &grid, &InferenceParams::default(), &mut rng).unwrap();
        let (oracle, _) = single_gp_mean(&xf, &yf, post.region_hyper[1], grid.points());
        let m = &post.property.mean;
        let n = m.len() as f64;
        let (ma, mb) = (m.iter().sum::<f64>() / n, oracle.iter().sum::<f64>() / n);
        let cov: f64 = m.iter().zip(&oracle).map(|(a, b)| (a - ma) * (b - mb)).sum();
        let va: f64 = m.iter().map(|a| (a - ma).powi(2)).sum();
        let vb: f64 = oracle.iter().map(|b| (b - mb).powi(2)).sum();
        let corr = cov / (va * vb).sqrt();
        assert!(corr >= 0.95, "correlation {corr}");
    }

    #[test]
    fn mismatched_property_lengths_rejected() {
        let grid = CompositionGrid::standard();
        let mut rng = substream(4, "t", "co");
        let r = coregional_infer(
            &PhaseLabelSet::default(),
            &[1.0],
            &[],
            &grid,
            &InferenceParams::default(),
            &mut rng,
        );
        assert!(r.is_err());
    }
}
