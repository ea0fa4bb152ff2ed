//! Least-squares gradient-boosted regression trees over sparse count
//! features.
//!
//! Splits test `x[feature] <= threshold`; absent features are zero, so every
//! split sends the zero block left. Training keeps each feature column
//! sorted once and evaluates all thresholds of a tree level in one pass over
//! the nonzero entries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kmeans::SparseCounts;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GbmError {
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("{rows} feature rows but {targets} targets")]
    Shape { rows: usize, targets: usize },
    #[error("unsupported model version {0}")]
    Version(u32),
    #[error("model JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbmParams {
    pub trees: usize,
    pub depth: usize,
    pub nu: f64,
    pub min_leaf: usize,
}

impl Default for GbmParams {
    fn default() -> Self {
        GbmParams { trees: 100, depth: 4, nu: 0.1, min_leaf: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Split { feature: u32, threshold: f64, left: Box<Node>, right: Box<Node> },
    Leaf(f64),
}

impl Node {
    fn eval(&self, x: &SparseCounts) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf(v) => return *v,
                Node::Split { feature, threshold, left, right } => {
                    node = if value_of(x, *feature) <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf(_) => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

fn value_of(x: &SparseCounts, feature: u32) -> f64 {
    x.binary_search_by_key(&feature, |&(i, _)| i).map(|p| f64::from(x[p].1)).unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub version: u32,
    pub base: f64,
    pub nu: f64,
    pub params: GbmParams,
    pub trees: Vec<Node>,
    /// Training MSE before any tree and after each tree.
    pub train_mse: Vec<f64>,
    /// Target minus prediction for every training row, in input order.
    pub train_residuals: Vec<f64>,
    pub max_abs_residual: f64,
}

impl GbmModel {
    pub fn predict_raw(&self, x: &SparseCounts) -> f64 {
        self.base + self.nu * self.trees.iter().map(|t| t.eval(x)).sum::<f64>()
    }

    /// Prediction clipped to the energy range `[0, max]`.
    pub fn predict_energy(&self, x: &SparseCounts, max: f64) -> f64 {
        self.predict_raw(x).clamp(0.0, max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GbmError> {
        let m: GbmModel = serde_json::from_str(text)?;
        if m.version != MODEL_VERSION {
            return Err(GbmError::Version(m.version));
        }
        Ok(m)
    }
}

struct ArenaNode {
    count: usize,
    sum: f64,
    split: Option<(u32, f64, usize, usize)>,
}

#[derive(Clone, Copy, Default)]
struct ColumnAcc {
    nz_count: usize,
    nz_sum: f64,
    seen_count: usize,
    seen_sum: f64,
    last: f64,
}

#[derive(Clone, Copy)]
struct Best {
    gain: f64,
    feature: u32,
    threshold: f64,
}

pub fn fit(rows: &[&SparseCounts], y: &[f64], params: GbmParams) -> Result<GbmModel, GbmError> {
    let n = rows.len();
    if n != y.len() {
        return Err(GbmError::Shape { rows: n, targets: y.len() });
    }
    if n < 2 {
        return Err(GbmError::TooFewRows(n));
    }
    let base = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    let mse = |pred: &[f64]| y.iter().zip(pred).map(|(t, p)| (t - p) * (t - p)).sum::<f64>() / n as f64;
    let mut train_mse = vec![mse(&pred)];
    let mut trees = Vec::new();

    // feature columns: (feature, entries sorted by (value, row))
    let mut columns: std::collections::BTreeMap<u32, Vec<(f64, u32)>> = Default::default();
    for (r, row) in rows.iter().enumerate() {
        for &(f, c) in row.iter() {
            columns.entry(f).or_default().push((f64::from(c), r as u32));
        }
    }
    let columns: Vec<(u32, Vec<(f64, u32)>)> = columns
        .into_iter()
        .map(|(f, mut e)| {
            e.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            (f, e)
        })
        .collect();
    let all_identical = rows.windows(2).all(|w| w[0] == w[1]);

    if !all_identical {
        for _ in 0..params.trees {
            let residual: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
            let (tree, leaf_of_row) = grow(&columns, rows, &residual, params);
            for r in 0..n {
                pred[r] += params.nu * leaf_of_row[r];
            }
            train_mse.push(mse(&pred));
            trees.push(tree);
        }
    }
    let train_residuals: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
    let max_abs_residual = train_residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    Ok(GbmModel { version: MODEL_VERSION, base, nu: params.nu, params, trees, train_mse, train_residuals, max_abs_residual })
}

/// One regression tree on the residuals; also returns each row's leaf value.
fn grow(columns: &[(u32, Vec<(f64, u32)>)], rows: &[&SparseCounts], residual: &[f64], params: GbmParams) -> (Node, Vec<f64>) {
    let n = rows.len();
    let min_leaf = params.min_leaf.max(1);
    let mut arena = vec![ArenaNode { count: n, sum: residual.iter().sum(), split: None }];
    let mut node_of = vec![0usize; n];
    let mut frontier = vec![0usize];
    for _ in 0..params.depth {
        if frontier.is_empty() {
            break;
        }
        let mut is_frontier = vec![false; arena.len()];
        for &f in &frontier {
            is_frontier[f] = true;
        }
        let mut best: Vec<Option<Best>> = vec![None; arena.len()];
        let mut acc = vec![ColumnAcc::default(); arena.len()];
        let mut touched: Vec<usize> = Vec::new();
        for (feature, entries) in columns {
            for &t in &touched {
                acc[t] = ColumnAcc::default();
            }
            touched.clear();
            for &(v, r) in entries {
                let node = node_of[r as usize];
                if !is_frontier[node] {
                    continue;
                }
                if acc[node].nz_count == 0 {
                    touched.push(node);
                }
                acc[node].nz_count += 1;
                acc[node].nz_sum += residual[r as usize];
                let _ = v;
            }
            for &(v, r) in entries {
                let node = node_of[r as usize];
                if !is_frontier[node] {
                    continue;
                }
                let a = acc[node];
                if a.seen_count == 0 || v > a.last {
                    // threshold between the previous value (0 for the zero block) and v
                    let lower = if a.seen_count == 0 { 0.0 } else { a.last };
                    let right_count = a.nz_count - a.seen_count;
                    let right_sum = a.nz_sum - a.seen_sum;
                    let node_stats = &arena[node];
                    let left_count = node_stats.count - right_count;
                    let left_sum = node_stats.sum - right_sum;
                    if left_count >= min_leaf && right_count >= min_leaf {
                        let gain = left_sum * left_sum / left_count as f64 + right_sum * right_sum / right_count as f64
                            - node_stats.sum * node_stats.sum / node_stats.count as f64;
                        if gain > 1e-12 && best[node].is_none_or(|b| gain > b.gain) {
                            best[node] = Some(Best { gain, feature: *feature, threshold: 0.5 * (lower + v) });
                        }
                    }
                }
                let a = &mut acc[node];
                a.seen_count += 1;
                a.seen_sum += residual[r as usize];
                a.last = v;
            }
        }
        let mut next = Vec::new();
        let mut child_of: Vec<Option<(usize, usize, u32, f64)>> = vec![None; arena.len()];
        for &f in &frontier {
            if let Some(b) = best[f] {
                let l = arena.len();
                arena.push(ArenaNode { count: 0, sum: 0.0, split: None });
                arena.push(ArenaNode { count: 0, sum: 0.0, split: None });
                arena[f].split = Some((b.feature, b.threshold, l, l + 1));
                child_of[f] = Some((l, l + 1, b.feature, b.threshold));
                next.push(l);
                next.push(l + 1);
            }
        }
        for r in 0..n {
            if let Some((l, rt, feature, thr)) = child_of[node_of[r]] {
                let c = if value_of(rows[r], feature) <= thr { l } else { rt };
                node_of[r] = c;
                arena[c].count += 1;
                arena[c].sum += residual[r];
            }
        }
        frontier = next;
    }
    let leaf_value = |a: &ArenaNode| if a.count == 0 { 0.0 } else { a.sum / a.count as f64 };
    let per_row: Vec<f64> = node_of.iter().map(|&i| leaf_value(&arena[i])).collect();
    fn build(arena: &[ArenaNode], i: usize, leaf_value: &dyn Fn(&ArenaNode) -> f64) -> Node {
        match arena[i].split {
            None => Node::Leaf(leaf_value(&arena[i])),
            Some((feature, threshold, l, r)) => Node::Split {
                feature,
                threshold,
                left: Box::new(build(arena, l, leaf_value)),
                right: Box::new(build(arena, r, leaf_value)),
            },
        }
    }
    (build(&arena, 0, &leaf_value), per_row)
}
