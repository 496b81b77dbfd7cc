//! Helpers shared by the integration tests: a dense-matrix GP written
//! without nalgebra, and small fixtures.

#![allow(dead_code)]

/// Matérn-5/2 covariance, coded independently of the library.
pub fn matern(r: f64, l: f64, s: f64) -> f64 {
    let a = 5f64.sqrt() * r.abs() / l;
    s * s * (1.0 + a + a * a / 3.0) * (-a).exp()
}

pub fn squared_exp(r: f64, l: f64, s: f64) -> f64 {
    s * s * (-0.5 * (r / l).powi(2)).exp()
}

/// Invert a small dense matrix by Gauss–Jordan elimination with partial
/// pivoting and return `(inverse, determinant)`.
pub fn invert(a: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if pivot != col {
            m.swap(pivot, col);
            det = -det;
        }
        let p = m[col][col];
        det *= p;
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for row in 0..n {
            if row != col {
                let f = m[row][col];
                if f != 0.0 {
                    for k in 0..2 * n {
                        m[row][k] -= f * m[col][k];
                    }
                }
            }
        }
    }
    (m.into_iter().map(|r| r[n..].to_vec()).collect(), det)
}

pub struct OracleGp {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub lml: f64,
}

/// Textbook GP posterior and log marginal likelihood.
pub fn oracle_gp(
    kern: impl Fn(f64, f64, f64) -> f64,
    x: &[f64],
    y: &[f64],
    l: f64,
    s: f64,
    noise: f64,
    at: &[f64],
) -> OracleGp {
    let n = x.len();
    let k: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| kern(x[i] - x[j], l, s) + if i == j { noise * noise } else { 0.0 })
                .collect()
        })
        .collect();
    let (kinv, det) = invert(&k);
    let alpha: Vec<f64> = (0..n).map(|i| (0..n).map(|j| kinv[i][j] * y[j]).sum()).collect();
    let quad: f64 = (0..n).map(|i| y[i] * alpha[i]).sum();
    let lml = -0.5 * quad - 0.5 * det.ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    let mut mean = Vec::new();
    let mut sd = Vec::new();
    for &t in at {
        let ks: Vec<f64> = x.iter().map(|&xi| kern(t - xi, l, s)).collect();
        mean.push((0..n).map(|i| ks[i] * alpha[i]).sum());
        let v: f64 = (0..n)
            .map(|i| (0..n).map(|j| ks[i] * kinv[i][j] * ks[j]).sum::<f64>())
            .sum();
        sd.push((kern(0.0, l, s) - v).max(0.0).sqrt());
    }
    OracleGp { mean, sd, lml }
}

/// Three-point dataset used for oracle comparisons.
pub const ORACLE_X: [f64; 3] = [12.0, 47.0, 81.0];
pub const ORACLE_Y: [f64; 3] = [1.3, -0.7, 2.4];
