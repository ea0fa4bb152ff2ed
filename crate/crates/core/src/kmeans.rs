//! Lloyd's k-means over sparse count vectors with k-means++ seeding.
//! Points stay sparse; centroids are dense with cached squared norms.

use rand::Rng;

pub type SparseCounts = [(u32, u32)];

#[derive(Debug, Clone)]
pub struct KMeans {
    /// Cluster of each point, in `0..centroids.len()`.
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

impl KMeans {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Points per cluster.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k()];
        for &a in &self.assignment {
            s[a] += 1;
        }
        s
    }
}

pub fn sq_norm(p: &SparseCounts) -> f64 {
    p.iter().map(|&(_, c)| f64::from(c) * f64::from(c)).sum()
}

fn dot(p: &SparseCounts, c: &[f64]) -> f64 {
    p.iter().map(|&(i, v)| f64::from(v) * c[i as usize]).sum()
}

/// Squared distance between a sparse point and a dense centroid.
pub fn sq_dist(p: &SparseCounts, p_norm: f64, c: &[f64], c_norm: f64) -> f64 {
    (p_norm - 2.0 * dot(p, c) + c_norm).max(0.0)
}

fn densify(p: &SparseCounts, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for &(i, c) in p {
        v[i as usize] = f64::from(c);
    }
    v
}

/// Cluster `points` (dimension `dim`) into at most `k` groups. Fewer
/// centroids come back when the points have fewer than `k` distinct values.
pub fn kmeans<R: Rng + ?Sized>(points: &[&SparseCounts], dim: usize, k: usize, max_iter: usize, rng: &mut R) -> KMeans {
    let n = points.len();
    if n == 0 || k == 0 {
        return KMeans { assignment: vec![0; n], centroids: Vec::new(), iterations: 0 };
    }
    let norms: Vec<f64> = points.iter().map(|p| sq_norm(p)).collect();

    // k-means++ seeding
    let first = rng.random_range(0..n);
    let mut centroids = vec![densify(points[first], dim)];
    let mut c_norms = vec![norms[first]];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points[i], norms[i], &centroids[0], c_norms[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let r = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            acc += d;
            if acc > r {
                pick = i;
                break;
            }
        }
        if d2[pick] <= 0.0 {
            // rounding landed on a zero-mass point; take the farthest instead
            pick = (0..n).max_by(|&a, &b| d2[a].total_cmp(&d2[b]).then(b.cmp(&a))).expect("non-empty");
        }
        let c = densify(points[pick], dim);
        let cn = norms[pick];
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(points[i], norms[i], &c, cn));
        }
        centroids.push(c);
        c_norms.push(cn);
    }

    let kk = centroids.len();
    let mut assignment = vec![usize::MAX; n];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut changed = false;
        for i in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, cent) in centroids.iter().enumerate() {
                let d = sq_dist(points[i], norms[i], cent, c_norms[c]);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; kk];
        let mut counts = vec![0usize; kk];
        for i in 0..n {
            let a = assignment[i];
            counts[a] += 1;
            for &(j, v) in points[i] {
                sums[a][j as usize] += f64::from(v);
            }
        }
        for c in 0..kk {
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            for x in sums[c].iter_mut() {
                *x *= inv;
            }
            c_norms[c] = sums[c].iter().map(|x| x * x).sum();
            centroids[c] = std::mem::take(&mut sums[c]);
        }
    }
    KMeans { assignment, centroids, iterations }
}

/// Sum of squared distances of each point to its cluster centroid.
pub fn sse(points: &[&SparseCounts], km: &KMeans) -> f64 {
    let c_norms: Vec<f64> = km.centroids.iter().map(|c| c.iter().map(|x| x * x).sum()).collect();
    points
        .iter()
        .zip(&km.assignment)
        .map(|(p, &a)| sq_dist(p, sq_norm(p), &km.centroids[a], c_norms[a]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separates_two_groups() {
        let a: Vec<Vec<(u32, u32)>> = (0..10).map(|i| vec![(0, 10 + i % 2), (1, 1)]).collect();
        let b: Vec<Vec<(u32, u32)>> = (0..10).map(|i| vec![(5, 10 + i % 3)]).collect();
        let pts: Vec<&SparseCounts> = a.iter().chain(&b).map(|v| v.as_slice()).collect();
        let km = kmeans(&pts, 8, 2, 100, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(km.k(), 2);
        assert!(km.assignment[..10].iter().all(|&x| x == km.assignment[0]));
        assert!(km.assignment[10..].iter().all(|&x| x == km.assignment[10]));
        assert_ne!(km.assignment[0], km.assignment[10]);
    }

    #[test]
    fn identical_points_give_one_centroid() {
        let v = vec![(3u32, 2u32)];
        let pts: Vec<&SparseCounts> = vec![v.as_slice(); 5];
        let km = kmeans(&pts, 4, 3, 100, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(km.k(), 1);
        assert_eq!(sse(&pts, &km), 0.0);
    }
}
