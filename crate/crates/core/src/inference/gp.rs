//! Gaussian-process regression on the composition axis.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::{InferenceParams, PropertyPosterior};
use crate::domain::CompositionGrid;
use crate::error::InferenceError;

const MAX_JITTER: f64 = 1e-2;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Matern52,
    Rbf,
}

/// Matérn ν=5/2 covariance at distance `r`.
pub fn matern52(r: f64, length_scale: f64, signal_sd: f64) -> f64 {
    let z = 5f64.sqrt() * r.abs() / length_scale;
    signal_sd * signal_sd * (1.0 + z + z * z / 3.0) * (-z).exp()
}

/// Squared-exponential covariance at distance `r`.
pub fn rbf(r: f64, length_scale: f64, signal_sd: f64) -> f64 {
    signal_sd * signal_sd * (-0.5 * (r / length_scale).powi(2)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub length_scale: f64,
    pub signal_sd: f64,
    pub noise_sd: f64,
}

impl KernelKind {
    pub fn eval(self, r: f64, h: &GpHyper) -> f64 {
        match self {
            KernelKind::Matern52 => matern52(r, h.length_scale, h.signal_sd),
            KernelKind::Rbf => rbf(r, h.length_scale, h.signal_sd),
        }
    }
}

pub(crate) fn cross_covariance(kind: KernelKind, a: &[f64], b: &[f64], h: &GpHyper) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| kind.eval(a[i] - b[j], h))
}

/// Cholesky of `k`, first as given and then with diagonal jitter starting
/// at `base_jitter` and growing ×10 up to 1e-2. Returns the jitter used.
pub(crate) fn cholesky_escalating(
    k: &DMatrix<f64>,
    base_jitter: f64,
) -> Result<(Cholesky<f64, Dyn>, f64), InferenceError> {
    if let Some(c) = Cholesky::new(k.clone()) {
        return Ok((c, 0.0));
    }
    let mut jitter = base_jitter;
    loop {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(kj) {
            return Ok((c, jitter));
        }
        if jitter >= MAX_JITTER {
            return Err(InferenceError::Cholesky(jitter));
        }
        jitter = (jitter * 10.0).min(MAX_JITTER);
    }
}

/// A GP conditioned on training data with fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub kernel: KernelKind,
    pub hyper: GpHyper,
    x: Vec<f64>,
    y: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpModel {
    pub fn new(
        kernel: KernelKind,
        x: &[f64],
        y: &[f64],
        hyper: GpHyper,
        base_jitter: f64,
    ) -> Result<Self, InferenceError> {
        if x.is_empty() || x.len() != y.len() {
            return Err(InferenceError::NoData);
        }
        let mut k = cross_covariance(kernel, x, x, &hyper);
        let n2 = hyper.noise_sd * hyper.noise_sd;
        for i in 0..x.len() {
            k[(i, i)] += n2;
        }
        let (chol, jitter) = cholesky_escalating(&k, base_jitter)?;
        let alpha = chol.solve(&DVector::from_column_slice(y));
        Ok(Self {
            kernel,
            hyper,
            x: x.to_vec(),
            y: y.to_vec(),
            chol,
            alpha,
            jitter,
        })
    }

    pub fn training_x(&self) -> &[f64] {
        &self.x
    }

    pub fn training_y(&self) -> &[f64] {
        &self.y
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `-½ yᵀK⁻¹y − ½ ln|K| − (m/2) ln 2π`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let y = DVector::from_column_slice(&self.y);
        let fit = y.dot(&self.alpha);
        let l = self.chol.l_dirty();
        let half_logdet: f64 = (0..self.x.len()).map(|i| l[(i, i)].ln()).sum();
        -0.5 * fit - half_logdet - 0.5 * self.x.len() as f64 * LN_2PI
    }

    /// Latent-function posterior mean and standard deviation at `xs`.
    pub fn predict(&self, xs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let ks = cross_covariance(self.kernel, &self.x, xs, &self.hyper);
        let mean = ks.transpose() * &self.alpha;
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&ks)
            .expect("cholesky factor is nonsingular");
        let prior = self.kernel.eval(0.0, &self.hyper);
        let sd = (0..xs.len())
            .map(|j| {
                let var = prior - v.column(j).norm_squared();
                var.max(0.0).sqrt()
            })
            .collect();
        (mean.iter().copied().collect(), sd)
    }

    /// Joint latent posterior at `xs`: mean vector and full covariance.
    pub fn posterior_joint(&self, xs: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let ks = cross_covariance(self.kernel, &self.x, xs, &self.hyper);
        let mean = ks.transpose() * &self.alpha;
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&ks)
            .expect("cholesky factor is nonsingular");
        let cov = cross_covariance(self.kernel, xs, xs, &self.hyper) - v.transpose() * v;
        (mean, cov)
    }
}

/// Log marginal likelihood at fixed hyperparameters.
pub fn log_marginal_likelihood(
    kernel: KernelKind,
    x: &[f64],
    y: &[f64],
    hyper: GpHyper,
    base_jitter: f64,
) -> Result<f64, InferenceError> {
    Ok(GpModel::new(kernel, x, y, hyper, base_jitter)?.log_marginal_likelihood())
}

/// Fit hyperparameters by maximizing the log marginal likelihood with
/// multi-start Nelder–Mead in log space, clamped to the bounds in `params`.
pub fn gp_fit(
    x: &[f64],
    y: &[f64],
    kernel: KernelKind,
    params: &InferenceParams,
) -> Result<GpModel, InferenceError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(InferenceError::NoData);
    }
    params.validate()?;
    let bounds = [
        params.length_scale_bounds,
        params.signal_sd_bounds,
        params.noise_sd_bounds,
    ];
    let lo = bounds.map(|b| b.0.ln());
    let hi = bounds.map(|b| b.1.ln());
    let to_hyper = |p: &[f64; 3]| GpHyper {
        length_scale: p[0].exp(),
        signal_sd: p[1].exp(),
        noise_sd: p[2].exp(),
    };
    let objective = |p: &[f64; 3]| match log_marginal_likelihood(kernel, x, y, to_hyper(p), params.jitter) {
        Ok(v) if v.is_finite() => -v,
        _ => f64::INFINITY,
    };

    let mut best: Option<([f64; 3], f64)> = None;
    for start in 1..=params.restarts {
        let frac = [halton(start, 2), halton(start, 3), halton(start, 5)];
        let x0 = [0, 1, 2].map(|d| lo[d] + frac[d] * (hi[d] - lo[d]));
        let (p, f) = nelder_mead(&objective, x0, lo, hi, 1e-6, 2000);
        if f.is_finite() && best.is_none_or(|(_, bf)| f < bf) {
            best = Some((p, f));
        }
    }
    let (p, _) = best.ok_or(InferenceError::Cholesky(MAX_JITTER))?;
    GpModel::new(kernel, x, y, to_hyper(&p), params.jitter)
}

/// Posterior of a fitted model on every grid point.
pub fn gp_predict(model: &GpModel, grid: &CompositionGrid) -> PropertyPosterior {
    let (mean, sd) = model.predict(grid.points());
    PropertyPosterior {
        grid: grid.clone(),
        mean,
        sd,
    }
}

fn halton(mut index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

fn clamp3(p: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|d| p[d].clamp(lo[d], hi[d]))
}

/// Box-clamped Nelder–Mead minimizer. Stops when the spread of objective
/// values across the simplex drops below `tol`.
fn nelder_mead<F: Fn(&[f64; 3]) -> f64>(
    f: &F,
    x0: [f64; 3],
    lo: [f64; 3],
    hi: [f64; 3],
    tol: f64,
    max_iter: usize,
) -> ([f64; 3], f64) {
    let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
    let x0 = clamp3(x0, lo, hi);
    simplex.push((x0, f(&x0)));
    for d in 0..3 {
        let step = 0.1 * (hi[d] - lo[d]);
        let mut p = x0;
        p[d] = if p[d] + step <= hi[d] { p[d] + step } else { p[d] - step };
        let p = clamp3(p, lo, hi);
        simplex.push((p, f(&p)));
    }
    let sort = |s: &mut Vec<([f64; 3], f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    for _ in 0..max_iter {
        sort(&mut simplex);
        let (best, worst) = (simplex[0].1, simplex[3].1);
        if best.is_finite() && worst.is_finite() && (worst - best).abs() < tol {
            break;
        }
        let mut centroid = [0.0; 3];
        for (p, _) in &simplex[..3] {
            for d in 0..3 {
                centroid[d] += p[d] / 3.0;
            }
        }
        let along = |t: f64| {
            clamp3(
                [0, 1, 2].map(|d| centroid[d] + t * (simplex[3].0[d] - centroid[d])),
                lo,
                hi,
            )
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe);
            simplex[3] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[2].1 {
            simplex[3] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[3].1 {
                let xc = along(-0.5);
                (xc, f(&xc))
            } else {
                let xc = along(0.5);
                (xc, f(&xc))
            };
            if fc < simplex[3].1.min(fr) {
                simplex[3] = (xc, fc);
            } else {
                let b = simplex[0].0;
                for item in simplex.iter_mut().skip(1) {
                    let p = [0, 1, 2].map(|d| b[d] + 0.5 * (item.0[d] - b[d]));
                    *item = (p, f(&p));
                }
            }
        }
    }
    sort(&mut simplex);
    simplex[0]
}
