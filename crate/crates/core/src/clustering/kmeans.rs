use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{sq_dist, ClusterError, CHUNK_ROWS};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    /// Converged once no centroid moves farther than this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k: 7,
            seed: 0,
            restarts: 10,
            tol: 1e-6,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    /// `k x d` centroid matrix.
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    pub objective: f64,
    pub n_iterations: usize,
    pub seed: u64,
    pub restarts: usize,
    /// Index of the restart that produced this model.
    pub best_restart: usize,
    /// Objective after every assignment step, one trace per restart.
    pub objective_trace: Vec<Vec<f64>>,
}

/// Sum of squared distances from each point to its assigned centroid.
pub fn objective(
    points: ArrayView2<'_, f64>,
    centroids: ArrayView2<'_, f64>,
    assignments: &[usize],
) -> Result<f64, ClusterError> {
    if points.nrows() != assignments.len() {
        return Err(ClusterError::ShapeMismatch(format!(
            "{} points but {} assignments",
            points.nrows(),
            assignments.len()
        )));
    }
    if points.ncols() != centroids.ncols() {
        return Err(ClusterError::ShapeMismatch(format!(
            "points have {} columns, centroids {}",
            points.ncols(),
            centroids.ncols()
        )));
    }
    let mut total = 0.0;
    for (row, &a) in points.rows().into_iter().zip(assignments) {
        if a >= centroids.nrows() {
            return Err(ClusterError::ShapeMismatch(format!(
                "assignment {a} out of range for {} centroids",
                centroids.nrows()
            )));
        }
        let c = centroids.row(a);
        total += row.iter().zip(c.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    Ok(total)
}

struct Lloyd<'a> {
    data: &'a [f64],
    n: usize,
    d: usize,
    k: usize,
}

struct RestartResult {
    centroids: Vec<f64>,
    assignments: Vec<usize>,
    objective: f64,
    iterations: usize,
    trace: Vec<f64>,
}

impl Lloyd<'_> {
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    fn plus_plus(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let (n, d) = (self.n, self.d);
        let mut centroids = Vec::with_capacity(self.k * d);
        let first = rng.random_range(0..n);
        centroids.extend_from_slice(self.row(first));
        let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(self.row(i), self.row(first))).collect();
        for _ in 1..self.k {
            let total: f64 = dist.iter().sum();
            let pick = if total > 0.0 {
                let target = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut chosen = n - 1;
                for (i, &w) in dist.iter().enumerate() {
                    acc += w;
                    if acc > target && w > 0.0 {
                        chosen = i;
                        break;
                    }
                }
                chosen
            } else {
                rng.random_range(0..n)
            };
            let c = self.row(pick).to_vec();
            for (i, di) in dist.iter_mut().enumerate() {
                *di = di.min(sq_dist(self.row(i), &c));
            }
            centroids.extend_from_slice(&c);
        }
        centroids
    }

    /// Nearest-centroid assignment. Returns the number of changed labels.
    fn assign(&self, centroids: &[f64], labels: &mut [usize], dist: &mut [f64]) -> usize {
        let (d, k) = (self.d, self.k);
        labels
            .par_chunks_mut(CHUNK_ROWS)
            .zip(dist.par_chunks_mut(CHUNK_ROWS))
            .enumerate()
            .map(|(chunk, (lab, dst))| {
                let base = chunk * CHUNK_ROWS;
                let mut changed = 0;
                for (off, (l, dd)) in lab.iter_mut().zip(dst.iter_mut()).enumerate() {
                    let x = self.row(base + off);
                    let mut best = 0;
                    let mut best_d = f64::INFINITY;
                    for c in 0..k {
                        let dc = sq_dist(x, &centroids[c * d..(c + 1) * d]);
                        if dc < best_d {
                            best_d = dc;
                            best = c;
                        }
                    }
                    if *l != best {
                        changed += 1;
                        *l = best;
                    }
                    *dd = best_d;
                }
                changed
            })
            .sum()
    }

    /// Move the farthest points into empty clusters.
    fn repair_empty(&self, centroids: &mut [f64], labels: &mut [usize], dist: &mut [f64]) -> bool {
        let mut counts = vec![0usize; self.k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let mut repaired = false;
        for c in 0..self.k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..self.n)
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
            let Some(far) = far else { break };
            counts[labels[far]] -= 1;
            counts[c] += 1;
            labels[far] = c;
            dist[far] = 0.0;
            let d = self.d;
            centroids[c * d..(c + 1) * d].copy_from_slice(&self.data[far * d..(far + 1) * d]);
            repaired = true;
        }
        repaired
    }

    fn update(&self, labels: &[usize]) -> Vec<f64> {
        let (d, k) = (self.d, self.k);
        let partials: Vec<(Vec<f64>, Vec<usize>)> = labels
            .par_chunks(CHUNK_ROWS)
            .enumerate()
            .map(|(chunk, lab)| {
                let base = chunk * CHUNK_ROWS;
                let mut sums = vec![0.0; k * d];
                let mut counts = vec![0usize; k];
                for (off, &l) in lab.iter().enumerate() {
                    counts[l] += 1;
                    for (s, x) in sums[l * d..(l + 1) * d].iter_mut().zip(self.row(base + off)) {
                        *s += x;
                    }
                }
                (sums, counts)
            })
            .collect();
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (s, c) in partials {
            for (a, b) in sums.iter_mut().zip(s) {
                *a += b;
            }
            for (a, b) in counts.iter_mut().zip(c) {
                *a += b;
            }
        }
        for c in 0..k {
            let n = counts[c].max(1) as f64;
            for v in &mut sums[c * d..(c + 1) * d] {
                *v /= n;
            }
        }
        sums
    }

    fn run(&self, params: &KMeansParams, restart: usize) -> RestartResult {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(restart as u64);
        let mut centroids = self.plus_plus(&mut rng);
        let mut labels = vec![usize::MAX; self.n];
        let mut dist = vec![0.0; self.n];
        let mut trace = Vec::new();
        let mut iterations = 0;

        loop {
            let changed = self.assign(&centroids, &mut labels, &mut dist);
            let repaired = self.repair_empty(&mut centroids, &mut labels, &mut dist);
            let j: f64 = dist.iter().sum();
            if let Some(&prev) = trace.last() {
                assert!(j <= prev * (1.0 + 1e-12), "k-means objective increased: {prev} -> {j}");
            }
            trace.push(j);
            if iterations > 0 && changed == 0 && !repaired {
                break;
            }
            if iterations >= params.max_iter {
                break;
            }
            let updated = self.update(&labels);
            let shift = (0..self.k)
                .map(|c| {
                    sq_dist(
                        &updated[c * self.d..(c + 1) * self.d],
                        &centroids[c * self.d..(c + 1) * self.d],
                    )
                })
                .fold(0.0f64, f64::max)
                .sqrt();
            centroids = updated;
            iterations += 1;
            if shift < params.tol {
                let changed = self.assign(&centroids, &mut labels, &mut dist);
                let repaired = self.repair_empty(&mut centroids, &mut labels, &mut dist);
                let j: f64 = dist.iter().sum();
                assert!(
                    j <= trace.last().copied().unwrap_or(f64::INFINITY) * (1.0 + 1e-12),
                    "k-means objective increased"
                );
                trace.push(j);
                if changed == 0 && !repaired {
                    break;
                }
            }
        }
        let objective = *trace.last().unwrap();
        RestartResult {
            centroids,
            assignments: labels,
            objective,
            iterations,
            trace,
        }
    }
}

/// Lloyd's algorithm with k-means++ seeding, best of `restarts` by objective.
///
/// Restart `r` draws from the ChaCha stream `r` of `seed`, so the result is a
/// pure function of the inputs and does not depend on the thread pool size.
pub fn kmeans(points: ArrayView2<'_, f64>, params: &KMeansParams) -> Result<ClusterModel, ClusterError> {
    let (n, d) = points.dim();
    if params.k == 0 {
        return Err(ClusterError::InvalidK);
    }
    if n < params.k {
        return Err(ClusterError::TooFewPoints { n, k: params.k });
    }
    if points.iter().any(|x| !x.is_finite()) {
        return Err(ClusterError::NonFinite);
    }
    let owned = points.as_standard_layout();
    let lloyd = Lloyd {
        data: owned.as_slice().expect("standard layout"),
        n,
        d,
        k: params.k,
    };

    let restarts = params.restarts.max(1);
    let mut best: Option<(usize, RestartResult)> = None;
    let mut traces = Vec::with_capacity(restarts);
    for r in 0..restarts {
        let mut res = lloyd.run(params, r);
        traces.push(std::mem::take(&mut res.trace));
        if best.as_ref().is_none_or(|(_, b)| res.objective < b.objective) {
            best = Some((r, res));
        }
    }
    let (best_restart, best) = best.unwrap();
    Ok(ClusterModel {
        k: params.k,
        centroids: Array2::from_shape_vec((params.k, d), best.centroids).expect("k x d"),
        assignments: best.assignments,
        objective: best.objective,
        n_iterations: best.iterations,
        seed: params.seed,
        restarts,
        best_restart,
        objective_trace: traces,
    })
}
