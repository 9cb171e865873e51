use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{kmeans, sq_dist, ClusterError, KMeansParams};

/// Objective and silhouette for each candidate k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCurve {
    pub k_values: Vec<usize>,
    pub objective_per_k: Vec<f64>,
    pub silhouette_per_k: Vec<f64>,
    /// k at the maximum second difference of the objective, when at least
    /// three k values were scanned.
    pub knee: Option<usize>,
}

/// Mean silhouette coefficient.
///
/// When `sample_size < n` a seeded subsample of that size is drawn and the
/// coefficient is computed within the subsample. Points alone in their
/// cluster score 0.
pub fn silhouette(
    points: ArrayView2<'_, f64>,
    assignments: &[usize],
    sample_size: usize,
    seed: u64,
) -> Result<f64, ClusterError> {
    let n = points.nrows();
    if n != assignments.len() {
        return Err(ClusterError::ShapeMismatch(format!(
            "{n} points but {} assignments",
            assignments.len()
        )));
    }
    let idx: Vec<usize> = if sample_size >= n {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = rand::seq::index::sample(&mut rng, n, sample_size).into_vec();
        s.sort_unstable();
        s
    };
    let k = idx.iter().map(|&i| assignments[i]).max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; k];
    for &i in &idx {
        counts[assignments[i]] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(ClusterError::SingleCluster);
    }

    let owned = points.as_standard_layout();
    let d = points.ncols();
    let data = owned.as_slice().expect("standard layout");
    let row = |i: usize| &data[i * d..(i + 1) * d];

    let scores: Vec<f64> = idx
        .par_iter()
        .map(|&i| {
            let own = assignments[i];
            if counts[own] <= 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for &j in &idx {
                if j != i {
                    sums[assignments[j]] += sq_dist(row(i), row(j)).sqrt();
                }
            }
            let a = sums[own] / (counts[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && counts[c] > 0)
                .map(|c| sums[c] / counts[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// k at the largest second difference `J[k-1] - 2 J[k] + J[k+1]`.
pub fn knee_point(k_values: &[usize], objective: &[f64]) -> Option<usize> {
    if k_values.len() < 3 {
        return None;
    }
    (1..k_values.len() - 1)
        .map(|i| (i, objective[i - 1] - 2.0 * objective[i] + objective[i + 1]))
        .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
            Some((_, bv)) if bv >= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| k_values[i])
}

/// Run k-means for every candidate k with a shared restart policy.
pub fn scan_k(
    points: ArrayView2<'_, f64>,
    k_values: &[usize],
    base: &KMeansParams,
    silhouette_sample: usize,
) -> Result<ValidationCurve, ClusterError> {
    let n = points.nrows();
    let mut objective_per_k = Vec::with_capacity(k_values.len());
    let mut silhouette_per_k = Vec::with_capacity(k_values.len());
    for &k in k_values {
        if k < 2 || k > n {
            return Err(ClusterError::TooFewPoints { n, k });
        }
        let model = kmeans(points, &KMeansParams { k, ..base.clone() })?;
        silhouette_per_k.push(silhouette(points, &model.assignments, silhouette_sample, base.seed)?);
        objective_per_k.push(model.objective);
    }
    let knee = knee_point(k_values, &objective_per_k);
    Ok(ValidationCurve {
        k_values: k_values.to_vec(),
        objective_per_k,
        silhouette_per_k,
        knee,
    })
}
