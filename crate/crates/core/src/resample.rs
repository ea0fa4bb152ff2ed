//! Resampling rules: multinomial and systematic draws for the simple engine,
//! cluster-level apportionment for the surrogate engine.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kmeans::{kmeans, SparseCounts};
use crate::posterior::likelihood;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resampling {
    #[default]
    Multinomial,
    Systematic,
}

/// Draw `count` indices proportional to `weights`. All-zero weights fall
/// back to uniform.
pub fn resample<R: Rng + ?Sized>(weights: &[f64], count: usize, how: Resampling, rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let mut cum = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &w in weights {
        acc += w;
        cum.push(acc);
    }
    if acc <= 0.0 || !acc.is_finite() {
        cum = (1..=n).map(|i| i as f64).collect();
        acc = n as f64;
    }
    let locate = |u: f64| cum.partition_point(|&c| c <= u).min(n - 1);
    match how {
        Resampling::Multinomial => (0..count).map(|_| locate(rng.random::<f64>() * acc)).collect(),
        Resampling::Systematic => {
            let step = acc / count as f64;
            let u0 = rng.random::<f64>() * step;
            (0..count).map(|i| locate(u0 + i as f64 * step)).collect()
        }
    }
}

/// Split `count` across groups proportionally to `weights` by largest
/// remainders (ties to the lower index), never exceeding `caps`; overflow
/// from capped groups is apportioned again over the rest.
pub fn largest_remainder(weights: &[f64], count: usize, caps: &[usize]) -> Vec<usize> {
    let k = weights.len();
    assert_eq!(k, caps.len());
    let mut alloc = vec![0usize; k];
    let mut remaining = count.min(caps.iter().sum());
    while remaining > 0 {
        let active: Vec<usize> = (0..k).filter(|&i| alloc[i] < caps[i]).collect();
        let total: f64 = active.iter().map(|&i| weights[i]).sum();
        let share = |i: usize| if total > 0.0 { weights[i] / total } else { 1.0 / active.len() as f64 };
        let exact: Vec<f64> = active.iter().map(|&i| remaining as f64 * share(i)).collect();
        let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
        let mut left = remaining - quota.iter().sum::<usize>().min(remaining);
        let mut order: Vec<usize> = (0..active.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &j in order.iter().cycle().take(active.len() * 2) {
            if left == 0 {
                break;
            }
            quota[j] += 1;
            left -= 1;
        }
        let mut overflow = 0;
        for (j, &i) in active.iter().enumerate() {
            let room = caps[i] - alloc[i];
            let give = quota[j].min(room);
            alloc[i] += give;
            overflow += quota[j] - give;
        }
        remaining = overflow;
    }
    alloc
}

/// Pick `count` candidates: k-means on the feature vectors, cluster weight =
/// mean exp(-beta * predicted energy), largest-remainder allocation, and the
/// best-predicted members of each cluster (ties by key). Returns candidate
/// indices.
#[allow(clippy::too_many_arguments)]
pub fn cluster_resample<R: Rng + ?Sized>(
    features: &[&SparseCounts],
    predicted: &[f64],
    keys: &[String],
    beta: f64,
    k: usize,
    count: usize,
    dim: usize,
    rng: &mut R,
) -> Vec<usize> {
    let n = features.len();
    if n == 0 || count == 0 {
        return Vec::new();
    }
    let km = kmeans(features, dim, k.min(n), 100, rng);
    let kk = km.k();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); kk];
    for (i, &a) in km.assignment.iter().enumerate() {
        members[a].push(i);
    }
    let mut weights = vec![0.0; kk];
    for (c, m) in members.iter_mut().enumerate() {
        m.sort_by(|&a, &b| predicted[a].total_cmp(&predicted[b]).then_with(|| keys[a].cmp(&keys[b])));
        if !m.is_empty() {
            weights[c] = m.iter().map(|&i| likelihood(predicted[i], beta)).sum::<f64>() / m.len() as f64;
        }
    }
    let caps: Vec<usize> = members.iter().map(Vec::len).collect();
    let alloc = largest_remainder(&weights, count, &caps);
    members.iter().zip(&alloc).flat_map(|(m, &a)| m[..a].iter().copied()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn apportionment_examples() {
        assert_eq!(largest_remainder(&[0.75, 0.25], 8, &[100, 100]), vec![6, 2]);
        assert_eq!(largest_remainder(&[1.0], 5, &[10]), vec![5]);
        let eq = largest_remainder(&[0.2; 3], 10, &[100; 3]);
        assert_eq!(eq.iter().sum::<usize>(), 10);
        assert!(eq.iter().all(|&x| (3..=4).contains(&x)));
        // a cap pushes the overflow to the other group
        assert_eq!(largest_remainder(&[0.9, 0.1], 10, &[3, 100]), vec![3, 7]);
        // total capacity limits the draw
        assert_eq!(largest_remainder(&[1.0, 1.0], 10, &[2, 3]), vec![2, 3]);
        assert_eq!(largest_remainder(&[0.0, 0.0], 4, &[10, 10]), vec![2, 2]);
    }

    #[test]
    fn resampling_respects_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = [0.0, 1.0, 0.0, 3.0];
        for how in [Resampling::Multinomial, Resampling::Systematic] {
            let d = resample(&w, 4000, how, &mut rng);
            assert!(d.iter().all(|&i| i == 1 || i == 3));
            let threes = d.iter().filter(|&&i| i == 3).count() as f64 / 4000.0;
            assert!((threes - 0.75).abs() < 0.03, "{how:?} {threes}");
        }
        let d = resample(&[0.0, 0.0], 10, Resampling::Multinomial, &mut rng);
        assert_eq!(d.len(), 10);
    }

    #[test]
    fn single_cluster_takes_best_predicted() {
        let feats: Vec<Vec<(u32, u32)>> = (0..6).map(|i| vec![(i, 1)]).collect();
        let refs: Vec<&SparseCounts> = feats.iter().map(|v| v.as_slice()).collect();
        let pred = [0.5, 0.1, 0.9, 0.1, 0.3, 0.7];
        let keys: Vec<String> = ["f", "e", "d", "c", "b", "a"].iter().map(|s| s.to_string()).collect();
        let got = cluster_resample(&refs, &pred, &keys, 20.0, 1, 3, 8, &mut ChaCha8Rng::seed_from_u64(0));
        // equal predictions resolve by key: "c" (index 3) before "e" (index 1)
        assert_eq!(got, vec![3, 1, 4]);
    }
}
