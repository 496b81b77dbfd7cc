//! Spectral clustering of Raman spectra with a cosine affinity.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::domain::{PhaseLabelSet, N_REGIONS};
use crate::error::InferenceError;

const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITER: usize = 300;

fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, InferenceError> {
    if a.len() != b.len() {
        return Err(InferenceError::LengthMismatch(a.len(), b.len()));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(InferenceError::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `1 - cos(a, b)`, in `[0, 2]`.
pub fn cosine_dissimilarity(a: &[f64], b: &[f64]) -> Result<f64, InferenceError> {
    Ok(1.0 - cosine_similarity(a, b)?)
}

/// Partition `spectra` into `k` clusters.
///
/// Affinity is the positive part of cosine similarity. Rows of the `k`
/// bottom eigenvectors of the symmetric normalized Laplacian are
/// unit-normalized and clustered with k-means (k-means++ seeding, best of
/// ten restarts). Cluster ids are arbitrary.
pub fn spectral_cluster<S: AsRef<[f64]>, R: Rng + ?Sized>(
    spectra: &[S],
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>, InferenceError> {
    let n = spectra.len();
    if k == 0 || n < k {
        return Err(InferenceError::TooFewSpectra { needed: k.max(1), got: n });
    }
    let mut affinity = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let a = cosine_similarity(spectra[i].as_ref(), spectra[j].as_ref())?.max(0.0);
            affinity[(i, j)] = a;
            affinity[(j, i)] = a;
        }
    }
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = affinity.row(i).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut laplacian = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            laplacian[(i, j)] -= inv_sqrt_deg[i] * affinity[(i, j)] * inv_sqrt_deg[j];
        }
    }
    let eig = SymmetricEigen::new(laplacian);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let mut embedding: Vec<Vec<f64>> = (0..n)
        .map(|i| order[..k].iter().map(|&c| eig.eigenvectors[(i, c)]).collect())
        .collect();
    for row in embedding.iter_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(kmeans(&embedding, k, rng))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn kmeans<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<usize> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let (inertia, labels) = lloyd(points, kmeans_pp(points, k, rng));
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    best.expect("at least one restart").1
}

fn kmeans_pp<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centers.last().unwrap()));
        }
    }
    centers
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> (f64, Vec<usize>) {
    let k = centers.len();
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (label, p) in labels.iter_mut().zip(points) {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&l, p) in labels.iter().zip(points) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            // Empty clusters keep their previous center.
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = labels
        .iter()
        .zip(points)
        .map(|(&l, p)| sq_dist(p, &centers[l]))
        .sum();
    (inertia, labels)
}

/// Relabel clusters so that region id increases with the cluster's mean
/// composition, and emit one-hot labels. Ties keep original id order.
pub fn align_labels(labels: &[usize], compositions: &[f64]) -> PhaseLabelSet {
    let mut stats: Vec<(usize, f64, usize)> = Vec::new();
    for (&l, &x) in labels.iter().zip(compositions) {
        match stats.iter_mut().find(|s| s.0 == l) {
            Some(s) => {
                s.1 += x;
                s.2 += 1;
            }
            None => stats.push((l, x, 1)),
        }
    }
    let mut means: Vec<(usize, f64)> = stats
        .into_iter()
        .map(|(l, sum, count)| (l, sum / count as f64))
        .collect();
    means.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let region_of = |l: usize| {
        let rank = means.iter().position(|m| m.0 == l).expect("label seen");
        rank.min(N_REGIONS - 1)
    };
    let regions: Vec<usize> = labels.iter().map(|&l| region_of(l)).collect();
    PhaseLabelSet::from_hard(compositions[..labels.len()].to_vec(), &regions)
        .expect("regions clamped into range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::truth::RamanModel;

    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        a.len() == b.len()
            && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
    }

    #[test]
    fn cosine_examples() {
        let v = [1.0, 2.0, 3.0];
        assert!(cosine_dissimilarity(&v, &v).unwrap().abs() < 1e-12);
        assert!((cosine_dissimilarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosine_dissimilarity(&v, &[2.0, 4.0, 6.0]).unwrap().abs() < 1e-12);
        assert_eq!(
            cosine_dissimilarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(InferenceError::ZeroVector)
        );
        assert!(cosine_dissimilarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn recovers_template_groups() {
        let model = RamanModel::default();
        let mut spectra = Vec::new();
        let mut truth = Vec::new();
        for r in 0..3 {
            for _ in 0..4 {
                spectra.push(model.template(r));
                truth.push(r);
            }
        }
        let mut rng = substream(1, "test", "cluster");
        let labels = spectral_cluster(&spectra, 3, &mut rng).unwrap();
        assert!(same_partition(&labels, &truth), "{labels:?}");

        // Reversed input order yields the same partition.
        let rev: Vec<Vec<f64>> = spectra.iter().rev().cloned().collect();
        let mut rev_labels = spectral_cluster(&rev, 3, &mut rng).unwrap();
        rev_labels.reverse();
        assert!(same_partition(&rev_labels, &truth));
    }

    #[test]
    fn copies_cluster_together() {
        let a = vec![1.0, 1.0, 0.0, 0.0];
        let b = vec![0.0, 0.0, 1.0, 1.0];
        let spectra = vec![a.clone(), a.clone(), b, a];
        let mut rng = substream(2, "test", "cluster");
        let labels = spectral_cluster(&spectra, 2, &mut rng).unwrap();
        assert_eq!(labels[0], labels[1]);
        assert_eq!(labels[0], labels[3]);
        assert_ne!(labels[0], labels[2]);
    }

    #[test]
    fn too_few_spectra() {
        let mut rng = substream(2, "test", "cluster");
        let spectra = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(
            spectral_cluster(&spectra, 3, &mut rng),
            Err(InferenceError::TooFewSpectra { needed: 3, got: 2 })
        );
    }

    #[test]
    fn align_examples() {
        // Cluster means 70, 10, 45 -> regions 2, 0, 1.
        let set = align_labels(&[0, 1, 2], &[70.0, 10.0, 45.0]);
        let hard: Vec<usize> = set
            .labels()
            .iter()
            .map(|l| l.iter().position(|&p| p == 1.0).unwrap())
            .collect();
        assert_eq!(hard, vec![2, 0, 1]);

        let set = align_labels(&[0, 0, 1, 2], &[5.0, 10.0, 40.0, 80.0]);
        let hard: Vec<usize> = set
            .labels()
            .iter()
            .map(|l| l.iter().position(|&p| p == 1.0).unwrap())
            .collect();
        assert_eq!(hard, vec![0, 0, 1, 2]);

        // Equal means: lower original id gets the lower region.
        let set = align_labels(&[1, 0], &[50.0, 50.0]);
        assert_eq!(set.labels()[0], [0.0, 1.0, 0.0]);
        assert_eq!(set.labels()[1], [1.0, 0.0, 0.0]);
    }
}
