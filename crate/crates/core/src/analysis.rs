//! Route prioritization: an L1-regularized multinomial logistic model over
//! reaction classes, the γ ranking score, X-means clustering and
//! per-cluster representatives.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use retrosmc_chem::Fingerprint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kmeans::{kmeans, sq_dist, sq_norm, SparseCounts};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("class model needs at least two classes among the labels")]
    SingleClass,
    #[error("class id {class} outside 0..{classes}")]
    ClassId { class: usize, classes: usize },
    #[error("feature index {index} outside dimension {dim}")]
    Feature { index: u32, dim: usize },
}

/// Binary descriptor: product bits followed by reactant-set bits.
pub fn class_features(product: &Fingerprint, reactants: &[&Fingerprint]) -> Vec<u32> {
    let offset = product.n_bits();
    let mut out: Vec<u32> = product.counts().iter().map(|&(i, _)| i).collect();
    let mut r: Vec<u32> = reactants.iter().flat_map(|fp| fp.counts().iter().map(move |&(i, _)| offset + i)).collect();
    r.sort_unstable();
    r.dedup();
    out.extend(r);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassExample {
    pub features: Vec<u32>,
    pub class_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassModelParams {
    pub l1: f64,
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for ClassModelParams {
    fn default() -> Self {
        ClassModelParams { l1: 1e-3, max_iter: 1000, tolerance: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    pub classes: usize,
    pub dim: usize,
    /// Row-major `classes x dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl ClassModel {
    /// Model with all parameters zero: uniform probabilities.
    pub fn uniform(classes: usize, dim: usize) -> Self {
        ClassModel { classes, dim, weights: vec![0.0; classes * dim], bias: vec![0.0; classes], iterations: 0, converged: true }
    }

    fn logits(&self, features: &[u32], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.weights[k * self.dim..(k + 1) * self.dim];
            *o = self.bias[k] + features.iter().filter(|&&i| (i as usize) < self.dim).map(|&i| row[i as usize]).sum::<f64>();
        }
    }

    pub fn probabilities(&self, features: &[u32]) -> Vec<f64> {
        let mut z = vec![0.0; self.classes];
        self.logits(features, &mut z);
        softmax_in_place(&mut z);
        z
    }

    /// Most probable class, ties to the lower id.
    pub fn predict(&self, features: &[u32]) -> (usize, f64) {
        argmax(&self.probabilities(features))
    }

    pub fn accuracy(&self, examples: &[ClassExample]) -> f64 {
        if examples.is_empty() {
            return 0.0;
        }
        let hits = examples.iter().filter(|e| self.predict(&e.features).0 == e.class_id).count();
        hits as f64 / examples.len() as f64
    }

    /// Fraction of weights (bias excluded) that are exactly zero.
    pub fn sparsity(&self) -> f64 {
        self.weights.iter().filter(|&&w| w == 0.0).count() as f64 / self.weights.len().max(1) as f64
    }
}

fn argmax(p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in p.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

/// Average loss gradient of the multinomial logistic objective at
/// `(w, b)`; returns the mean negative log-likelihood.
fn gradient(examples: &[ClassExample], classes: usize, dim: usize, w: &[f64], b: &[f64], gw: &mut [f64], gb: &mut [f64]) -> f64 {
    gw.iter_mut().for_each(|g| *g = 0.0);
    gb.iter_mut().for_each(|g| *g = 0.0);
    let n = examples.len() as f64;
    let mut z = vec![0.0; classes];
    let mut loss = 0.0;
    for e in examples {
        for (k, zk) in z.iter_mut().enumerate() {
            let row = &w[k * dim..(k + 1) * dim];
            *zk = b[k] + e.features.iter().map(|&i| row[i as usize]).sum::<f64>();
        }
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - z[e.class_id];
        for k in 0..classes {
            let r = ((z[k] - lse).exp() - if k == e.class_id { 1.0 } else { 0.0 }) / n;
            gb[k] += r;
            let row = &mut gw[k * dim..(k + 1) * dim];
            for &i in &e.features {
                row[i as usize] += r;
            }
        }
    }
    loss / n
}

/// Largest eigenvalue of `X^T X / n` with a constant bias column, by power
/// iteration.
fn gram_norm(examples: &[ClassExample], dim: usize) -> f64 {
    let n = examples.len() as f64;
    let mut v = vec![1.0; dim + 1];
    let mut lambda = 1.0;
    for _ in 0..100 {
        let mut next = vec![0.0; dim + 1];
        for e in examples {
            let xv = v[dim] + e.features.iter().map(|&i| v[i as usize]).sum::<f64>();
            next[dim] += xv / n;
            for &i in &e.features {
                next[i as usize] += xv / n;
            }
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 1.0;
        }
        let converged = (norm - lambda).abs() <= 1e-9 * norm;
        lambda = norm;
        v = next.into_iter().map(|x| x / norm).collect();
        if converged {
            break;
        }
    }
    lambda
}

/// Fit by FISTA with a Böhning curvature bound and adaptive restart. The
/// bias is not penalized.
pub fn train_class_model(
    examples: &[ClassExample],
    classes: usize,
    dim: usize,
    params: ClassModelParams,
) -> Result<ClassModel, AnalysisError> {
    for e in examples {
        if e.class_id >= classes {
            return Err(AnalysisError::ClassId { class: e.class_id, classes });
        }
        if let Some(&i) = e.features.iter().find(|&&i| i as usize >= dim) {
            return Err(AnalysisError::Feature { index: i, dim });
        }
    }
    let mut seen = vec![false; classes];
    examples.iter().for_each(|e| seen[e.class_id] = true);
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(AnalysisError::SingleClass);
    }

    let lip = 0.5 * gram_norm(examples, dim);
    let step = 1.0 / lip;
    let thresh = params.l1 * step;
    let nw = classes * dim;
    let (mut w, mut b) = (vec![0.0; nw], vec![0.0; classes]);
    let (mut yw, mut yb) = (w.clone(), b.clone());
    let (mut gw, mut gb) = (vec![0.0; nw], vec![0.0; classes]);
    let mut t = 1.0f64;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iter {
        iterations += 1;
        gradient(examples, classes, dim, &yw, &yb, &mut gw, &mut gb);
        let mut new_w = vec![0.0; nw];
        let mut map_sq = 0.0;
        for j in 0..nw {
            let u = yw[j] - step * gw[j];
            new_w[j] = u.signum() * (u.abs() - thresh).max(0.0);
            let d = (yw[j] - new_w[j]) * lip;
            map_sq += d * d;
        }
        let new_b: Vec<f64> = (0..classes).map(|k| yb[k] - step * gb[k]).collect();
        for k in 0..classes {
            let d = (yb[k] - new_b[k]) * lip;
            map_sq += d * d;
        }
        if map_sq.sqrt() <= params.tolerance {
            w = new_w;
            b = new_b;
            converged = true;
            break;
        }
        // restart momentum when it points against the last step
        let mut dot = 0.0;
        for j in 0..nw {
            dot += (yw[j] - new_w[j]) * (new_w[j] - w[j]);
        }
        for k in 0..classes {
            dot += (yb[k] - new_b[k]) * (new_b[k] - b[k]);
        }
        if dot > 0.0 {
            t = 1.0;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_next;
        for j in 0..nw {
            yw[j] = new_w[j] + mom * (new_w[j] - w[j]);
        }
        for k in 0..classes {
            yb[k] = new_b[k] + mom * (new_b[k] - b[k]);
        }
        w = new_w;
        b = new_b;
        t = t_next;
    }
    Ok(ClassModel { classes, dim, weights: w, bias: b, iterations, converged })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteScore {
    pub gamma: f64,
    pub alpha: f64,
    pub best_class: usize,
    pub best_class_prob: f64,
}

impl RouteScore {
    pub fn invalid() -> Self {
        RouteScore { gamma: 0.0, alpha: 0.0, best_class: 0, best_class_prob: 0.0 }
    }
}

/// γ = alpha times the largest class probability. `None` features mark an
/// invalid prediction.
pub fn score_route(cm: &ClassModel, alpha: f64, features: Option<&[u32]>) -> RouteScore {
    match features {
        None => RouteScore::invalid(),
        Some(f) => {
            let (best_class, p) = cm.predict(f);
            RouteScore { gamma: alpha * p, alpha, best_class, best_class_prob: p }
        }
    }
}

/// γ with the probability of a given class instead of the maximum.
pub fn score_route_known_class(
    cm: &ClassModel,
    alpha: f64,
    features: Option<&[u32]>,
    class_id: usize,
) -> Result<RouteScore, AnalysisError> {
    if class_id >= cm.classes {
        return Err(AnalysisError::ClassId { class: class_id, classes: cm.classes });
    }
    Ok(match features {
        None => RouteScore::invalid(),
        Some(f) => {
            let p = cm.probabilities(f)[class_id];
            RouteScore { gamma: alpha * p, alpha, best_class: class_id, best_class_prob: p }
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct XMeans {
    pub assignment: Vec<usize>,
    pub k: usize,
}

/// Spherical-Gaussian BIC of a clustering of `r` points in `m` dimensions.
fn bic(sizes: &[usize], sse: f64, m: usize) -> Option<f64> {
    let r: usize = sizes.iter().sum();
    let k = sizes.len();
    if r <= k {
        return None;
    }
    let (rf, mf, kf) = (r as f64, m as f64, k as f64);
    let var = (sse / (mf * (rf - kf))).max(f64::MIN_POSITIVE);
    let mut l: f64 = sizes.iter().filter(|&&n| n > 0).map(|&n| n as f64 * (n as f64 / rf).ln()).sum();
    l -= rf * mf / 2.0 * (2.0 * std::f64::consts::PI * var).ln();
    l -= mf * (rf - kf) / 2.0;
    let params = (kf - 1.0) + mf * kf + 1.0;
    Some(l - params / 2.0 * rf.ln())
}

fn centroid_sse(points: &[&SparseCounts], members: &[usize], dim: usize) -> f64 {
    let mut c = vec![0.0; dim];
    for &i in members {
        for &(j, v) in points[i] {
            c[j as usize] += f64::from(v);
        }
    }
    let inv = 1.0 / members.len() as f64;
    c.iter_mut().for_each(|x| *x *= inv);
    let cn: f64 = c.iter().map(|x| x * x).sum();
    members.iter().map(|&i| sq_dist(points[i], sq_norm(points[i]), &c, cn)).sum()
}

/// X-means: grow from one cluster by accepting 2-means splits whose BIC
/// beats the parent's, until no split helps or `k_max` is reached.
pub fn xmeans(points: &[&SparseCounts], dim: usize, k_max: usize, seed: u64) -> XMeans {
    let n = points.len();
    if n == 0 {
        return XMeans { assignment: Vec::new(), k: 0 };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clusters: Vec<Vec<usize>> = vec![(0..n).collect()];
    let k_max = k_max.max(1);
    loop {
        let mut next: Vec<Vec<usize>> = Vec::new();
        let mut split_any = false;
        for (ci, members) in clusters.iter().enumerate() {
            let room = k_max - (next.len() + clusters.len() - ci);
            if room == 0 || members.len() < 3 {
                next.push(members.clone());
                continue;
            }
            let sub: Vec<&SparseCounts> = members.iter().map(|&i| points[i]).collect();
            let km = kmeans(&sub, dim, 2, 100, &mut rng);
            if km.k() < 2 {
                next.push(members.clone());
                continue;
            }
            let mut halves = vec![Vec::new(), Vec::new()];
            for (j, &a) in km.assignment.iter().enumerate() {
                halves[a].push(members[j]);
            }
            if halves.iter().any(Vec::is_empty) {
                next.push(members.clone());
                continue;
            }
            let parent_sse = centroid_sse(points, members, dim);
            let child_sse: f64 = halves.iter().map(|h| centroid_sse(points, h, dim)).sum();
            let parent = bic(&[members.len()], parent_sse, dim);
            let child = bic(&[halves[0].len(), halves[1].len()], child_sse, dim);
            match (parent, child) {
                (Some(p), Some(c)) if c > p => {
                    next.extend(halves);
                    split_any = true;
                }
                _ => next.push(members.clone()),
            }
        }
        clusters = next;
        if !split_any || clusters.len() >= k_max {
            break;
        }
    }
    let mut assignment = vec![0; n];
    for (c, members) in clusters.iter().enumerate() {
        for &i in members {
            assignment[i] = c;
        }
    }
    XMeans { assignment, k: clusters.len() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    pub assignments: BTreeMap<String, usize>,
    pub k: usize,
    /// Best-γ key per cluster, ties to the smaller key.
    pub representatives: Vec<String>,
}

/// Per-cluster key with the largest γ, ties by key byte order.
pub fn representatives(assignments: &BTreeMap<String, usize>, gamma: &BTreeMap<String, f64>) -> Vec<String> {
    let k = assignments.values().map(|&c| c + 1).max().unwrap_or(0);
    let mut best: Vec<Option<(&str, f64)>> = vec![None; k];
    for (key, &c) in assignments {
        let g = gamma.get(key).copied().unwrap_or(0.0);
        match best[c] {
            Some((_, bg)) if bg >= g => {}
            _ => best[c] = Some((key, g)),
        }
    }
    best.into_iter().map(|b| b.map(|(k, _)| k.to_string()).unwrap_or_default()).collect()
}

/// Cluster keyed routes by their feature vectors and pick representatives.
pub fn cluster_routes(
    keys: &[String],
    points: &[&SparseCounts],
    gamma: &BTreeMap<String, f64>,
    dim: usize,
    k_max: usize,
    seed: u64,
) -> ClusterReport {
    let xm = xmeans(points, dim, k_max, seed);
    let assignments: BTreeMap<String, usize> = keys.iter().cloned().zip(xm.assignment.iter().copied()).collect();
    let representatives = representatives(&assignments, gamma);
    ClusterReport { assignments, k: xm.k, representatives }
}
