use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ClusterIndicator;
use crate::error::{Error, Result};

pub const DEFAULT_RESTARTS: usize = 10;
pub const MAX_LLOYD_ITERS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansOptions {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
}

impl KMeansOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            restarts: DEFAULT_RESTARTS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub indicator: ClusterIndicator,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    /// Inertia after every Lloyd iteration of the selected restart.
    pub inertia_trace: Vec<f64>,
    /// Index of the restart that won.
    pub restart: usize,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_seeds(points: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // guard against rounding landing on a zero-weight tail
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), centroids.row(c)));
        }
    }
    centroids
}

struct Run {
    assignments: Vec<usize>,
    centroids: Array2<f64>,
    inertia: f64,
    trace: Vec<f64>,
}

fn nearest(point: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(point, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn lloyd(points: ArrayView2<f64>, k: usize, mut centroids: Array2<f64>) -> Run {
    let (n, p) = points.dim();
    let mut assignments = vec![usize::MAX; n];
    let mut trace = Vec::new();
    for _ in 0..MAX_LLOYD_ITERS {
        let mut dists = vec![0.0; n];
        let mut changed = false;
        for i in 0..n {
            let (c, d) = nearest(points.row(i), &centroids);
            dists[i] = d;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }

        // Empty clusters take the point farthest from its own centroid.
        let mut sizes = vec![0usize; k];
        for &a in &assignments {
            sizes[a] += 1;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let donor = (0..n)
                .filter(|&i| sizes[assignments[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            if let Some(i) = donor {
                sizes[assignments[i]] -= 1;
                sizes[c] = 1;
                assignments[i] = c;
                dists[i] = 0.0;
                centroids.row_mut(c).assign(&points.row(i));
                changed = true;
            }
        }

        let mut sums = Array2::<f64>::zeros((k, p));
        for (i, &a) in assignments.iter().enumerate() {
            let mut row = sums.row_mut(a);
            row += &points.row(i);
        }
        for c in 0..k {
            if sizes[c] > 0 {
                let mean = &sums.row(c) / sizes[c] as f64;
                centroids.row_mut(c).assign(&mean);
            }
        }
        let inertia: f64 = (0..n)
            .map(|i| sq_dist(points.row(i), centroids.row(assignments[i])))
            .sum();
        trace.push(inertia);
        if !changed {
            break;
        }
    }
    let inertia = *trace.last().unwrap_or(&0.0);
    Run {
        assignments,
        centroids,
        inertia,
        trace,
    }
}

/// k-means with k-means++ seeding and Lloyd iterations, keeping the restart
/// with the lowest inertia (earliest restart on ties).
pub fn kmeans_fit(points: ArrayView2<f64>, opts: KMeansOptions) -> Result<KMeansFit> {
    let n = points.nrows();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if opts.k == 0 || opts.k > n {
        return Err(Error::InvalidClusterCount(format!(
            "k = {} for {n} points",
            opts.k
        )));
    }
    if opts.restarts == 0 {
        return Err(Error::InvalidClusterCount("restarts = 0".into()));
    }
    if points.iter().any(|x| !x.is_finite()) {
        return Err(Error::DomainError("k-means input".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(usize, Run)> = None;
    for restart in 0..opts.restarts {
        let seeds = plus_plus_seeds(points, opts.k, &mut rng);
        let run = lloyd(points, opts.k, seeds);
        if best.as_ref().is_none_or(|(_, b)| run.inertia < b.inertia) {
            best = Some((restart, run));
        }
    }
    let (restart, run) = best.expect("at least one restart");
    Ok(KMeansFit {
        indicator: ClusterIndicator {
            assignments: run.assignments,
            k: opts.k,
        },
        centroids: run.centroids,
        inertia: run.inertia,
        inertia_trace: run.trace,
        restart,
    })
}

pub fn kmeans(points: ArrayView2<f64>, k: usize, seed: u64, restarts: usize) -> Result<ClusterIndicator> {
    kmeans_fit(points, KMeansOptions { k, seed, restarts }).map(|f| f.indicator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Axis};
    use rand_distr::{Distribution, StandardNormal};

    fn inertia_of(points: &Array2<f64>, labels: &[usize], k: usize) -> f64 {
        let mut total = 0.0;
        for c in 0..k {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            let sub = points.select(Axis(0), &members);
            let mean = sub.mean_axis(Axis(0)).unwrap();
            for row in sub.rows() {
                total += sq_dist(row, mean.view());
            }
        }
        total
    }

    #[test]
    fn k_points_k_clusters() {
        let pts = array![[0.0, 0.0], [5.0, 1.0], [-3.0, 2.0], [1.0, -7.0]];
        let fit = kmeans_fit(pts.view(), KMeansOptions::new(4, 0)).unwrap();
        assert_eq!(fit.inertia, 0.0);
        let mut labels = fit.indicator.assignments.clone();
        labels.sort();
        assert_eq!(labels, vec![0, 1, 2, 3]);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = array![[0.0, 1.0], [2.0, 3.0], [4.0, 8.0]];
        let fit = kmeans_fit(pts.view(), KMeansOptions::new(1, 3)).unwrap();
        let mean = pts.mean_axis(Axis(0)).unwrap();
        assert!((&fit.centroids.row(0) - &mean).iter().all(|d| d.abs() < 1e-12));
        let var = pts.var_axis(Axis(0), 0.0).sum() * 3.0;
        assert!((fit.inertia - var).abs() < 1e-12);
    }

    #[test]
    fn separated_blobs_match_exhaustive_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let centers = [[0.0, 0.0], [100.0, 0.0], [0.0, 100.0]];
        let pts = Array2::from_shape_fn((12, 2), |(i, d)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            centers[i % 3][d] + z
        });
        let fit = kmeans_fit(pts.view(), KMeansOptions::new(3, 5)).unwrap();

        let mut best = (f64::INFINITY, vec![]);
        let mut labels = vec![0usize; 12];
        for code in 0..3usize.pow(12) {
            let mut c = code;
            for l in labels.iter_mut() {
                *l = c % 3;
                c /= 3;
            }
            let v = inertia_of(&pts, &labels, 3);
            if v < best.0 {
                best = (v, labels.clone());
            }
        }
        assert!((fit.inertia - best.0).abs() < 1e-9 * best.0.max(1.0));
        let opt = ClusterIndicator::new(best.1, 3).unwrap();
        assert!(fit.indicator.same_partition(&opt));
    }

    #[test]
    fn inertia_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = Array2::from_shape_fn((200, 3), |_| StandardNormal.sample(&mut rng));
        for seed in 0..5 {
            let fit = kmeans_fit(pts.view(), KMeansOptions { k: 6, seed, restarts: 1 }).unwrap();
            for w in fit.inertia_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9);
            }
            assert!(!fit.indicator.is_degenerate());
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts = Array2::from_shape_fn((60, 2), |_| StandardNormal.sample(&mut rng));
        let a = kmeans(pts.view(), 4, 17, 10).unwrap();
        let b = kmeans(pts.view(), 4, 17, 10).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let pts = array![[0.0], [0.0], [0.0], [1.0], [1.0]];
        let ind = kmeans(pts.view(), 3, 0, 3).unwrap();
        assert!(!ind.is_degenerate());
    }

    #[test]
    fn empty_input_errors() {
        let pts = Array2::<f64>::zeros((0, 2));
        assert!(matches!(kmeans(pts.view(), 1, 0, 1), Err(Error::EmptyInput)));
    }
}
