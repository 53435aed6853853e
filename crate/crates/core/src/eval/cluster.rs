use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KMEANS_RESTARTS: usize = 10;
const MAX_ITERS: usize = 300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub silhouette: f64,
    pub k: usize,
    pub inertia: f64,
    pub assignment: Vec<usize>,
}

fn dist2(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.outer_iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn seed_centroids<R: Rng>(points: &Array2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    centroids.row_mut(0).assign(&points.row(rng.gen_range(0..n)));
    let mut d: Vec<f64> = points.outer_iter().map(|p| dist2(p, centroids.row(0))).collect();
    for j in 1..k {
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, &di) in d.iter().enumerate() {
                if r < di {
                    idx = i;
                    break;
                }
                r -= di;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        centroids.row_mut(j).assign(&points.row(pick));
        for (i, p) in points.outer_iter().enumerate() {
            d[i] = d[i].min(dist2(p, centroids.row(j)));
        }
    }
    centroids
}

/// Lloyd iterations from a k-means++ start. Empty clusters keep their centroid.
fn lloyd(points: &Array2<f64>, mut centroids: Array2<f64>) -> (Vec<usize>, f64) {
    let k = centroids.nrows();
    let mut assign = vec![usize::MAX; points.nrows()];
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for (i, p) in points.outer_iter().enumerate() {
            let (j, _) = nearest(p, &centroids);
            if assign[i] != j {
                assign[i] = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for (i, p) in points.outer_iter().enumerate() {
            let mut row = sums.row_mut(assign[i]);
            row += &p;
            counts[assign[i]] += 1;
        }
        for (j, &n) in counts.iter().enumerate() {
            if n > 0 {
                centroids.row_mut(j).assign(&(&sums.row(j) / n as f64));
            }
        }
    }
    let inertia = points
        .outer_iter()
        .zip(&assign)
        .map(|(p, &j)| dist2(p, centroids.row(j)))
        .sum();
    (assign, inertia)
}

/// Best of `restarts` k-means++ runs by inertia. Returns `(assignment, inertia)`.
pub fn kmeans(points: &Array2<f64>, k: usize, seed: u64, restarts: usize) -> Result<(Vec<usize>, f64)> {
    if k < 2 {
        return Err(Error::Config(format!("k-means needs k >= 2, got {k}")));
    }
    if points.nrows() < k {
        return Err(Error::Config(format!(
            "k-means needs at least k = {k} points, got {}",
            points.nrows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let init = seed_centroids(points, k, &mut rng);
        let run = lloyd(points, init);
        if best.as_ref().is_none_or(|b| run.1 < b.1) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

/// Mean silhouette under Euclidean distance. Points in singleton clusters,
/// points with no other non-empty cluster, and points with `a = b = 0`
/// score 0.
pub fn silhouette(points: &Array2<f64>, assignment: &[usize], k: usize) -> Result<f64> {
    let n = points.nrows();
    if assignment.len() != n {
        return Err(Error::shape("cluster assignment", n, assignment.len()));
    }
    if n == 0 {
        return Err(Error::Empty("points"));
    }
    let mut sizes = vec![0usize; k];
    for &a in assignment {
        if a >= k {
            return Err(Error::OutOfRange {
                what: "cluster id",
                index: a,
                len: k,
            });
        }
        sizes[a] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        let own = assignment[i];
        if sizes[own] <= 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if j != i {
                sums[assignment[j]] += dist2(points.row(i), points.row(j)).sqrt();
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if !b.is_finite() {
            continue;
        }
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// K-Means with `k` clusters, then the silhouette of the resulting partition.
pub fn silhouette_kmeans(reps: &Array2<f64>, k: usize, seed: u64) -> Result<ClusterReport> {
    let (assignment, inertia) = kmeans(reps, k, seed, KMEANS_RESTARTS)?;
    Ok(ClusterReport {
        silhouette: silhouette(reps, &assignment, k)?,
        k,
        inertia,
        assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn separated_pairs() {
        let p = array![[0.0, 0.0], [0.0, 0.1], [100.0, 100.0], [100.0, 100.1]];
        let r = silhouette_kmeans(&p, 2, 0).unwrap();
        assert!(r.silhouette >= 0.9);
        assert_eq!(r.assignment[0], r.assignment[1]);
        assert_ne!(r.assignment[0], r.assignment[2]);
    }

    #[test]
    fn identical_points_score_zero() {
        let p = Array2::from_elem((5, 3), 1.5);
        let r = silhouette_kmeans(&p, 2, 0).unwrap();
        assert_eq!(r.silhouette, 0.0);
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn singleton_scores_zero() {
        let p = array![[0.0], [1.0], [10.0]];
        // cluster 1 is a singleton; only points 0 and 1 contribute
        let s = silhouette(&p, &[0, 0, 1], 2).unwrap();
        let s0 = (10.0 - 1.0) / 10.0;
        let s1 = (9.0 - 1.0) / 9.0;
        assert!((s - (s0 + s1) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_k() {
        let p = array![[0.0], [1.0]];
        assert!(silhouette_kmeans(&p, 1, 0).is_err());
        assert!(silhouette_kmeans(&p, 3, 0).is_err());
    }

    #[test]
    fn permutation_invariant() {
        let p = array![[0.0, 0.0], [1.0, 0.2], [0.3, 0.9], [5.0, 5.0], [6.0, 5.5], [5.2, 6.1]];
        let a = silhouette_kmeans(&p, 2, 4).unwrap().silhouette;
        let perm = [3, 0, 5, 1, 4, 2];
        let q = p.select(ndarray::Axis(0), &perm);
        let b = silhouette_kmeans(&q, 2, 4).unwrap().silhouette;
        assert!((a - b).abs() < 1e-12);
    }
}
