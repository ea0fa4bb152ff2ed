//! Multi-step routes, ground-truth files, chaining of recorded reactions,
//! route ranking and the rediscovery metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use retrosmc_chem::canonical_smiles;

use crate::analysis::RouteScore;
use crate::forward::{ForwardError, ForwardModel, ReactantSet};

pub const TOP_N: [usize; 5] = [1, 3, 5, 10, 100];

#[derive(Debug, Error)]
pub enum RouteError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no ground truth recorded for target {0}")]
    UnknownTarget(String),
    #[error("route needs at least one step")]
    Empty,
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error("ranked routes CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A chained sequence of forward predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub steps: Vec<ReactantSet>,
    pub intermediates: Vec<String>,
    pub final_product: Option<String>,
    pub alphas: Vec<f64>,
}

impl Route {
    pub fn is_valid(&self) -> bool {
        self.final_product.is_some()
    }
}

/// Run the catalog reactants of each step through the model, feeding each
/// product into the next step. An invalid step ends the route.
pub fn simulate_route<M: ForwardModel + ?Sized>(steps: &[Vec<String>], model: &M) -> Result<Route, RouteError> {
    if steps.is_empty() {
        return Err(RouteError::Empty);
    }
    let mut route = Route { steps: Vec::new(), intermediates: Vec::new(), final_product: None, alphas: Vec::new() };
    let mut carry: Option<String> = None;
    for (i, members) in steps.iter().enumerate() {
        let mut m = members.clone();
        if let Some(c) = carry.take() {
            m.push(c);
        }
        let set = ReactantSet::new(&m)?;
        let pred = model.predict(&set)?;
        route.steps.push(set);
        route.alphas.push(pred.alpha);
        match pred.product {
            None => return Ok(route),
            Some(p) if i + 1 < steps.len() => {
                route.intermediates.push(p.clone());
                carry = Some(p);
            }
            Some(p) => route.final_product = Some(p),
        }
    }
    Ok(route)
}

fn sorted_key(members: &[String]) -> String {
    let mut m = members.to_vec();
    m.sort();
    m.join(".")
}

/// A recorded single-step reaction.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Reaction {
    pub reactants: Vec<String>,
    pub product: String,
    pub class_id: Option<usize>,
}

impl Reaction {
    pub fn key(&self) -> String {
        sorted_key(&self.reactants)
    }
}

/// A two-step route: catalog reactants of step one, the intermediate, the
/// catalog reactants of step two, and the final product.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TwoStepTruth {
    pub first: Vec<String>,
    pub intermediate: String,
    pub second: Vec<String>,
    pub target: String,
    pub class_id: Option<usize>,
}

impl TwoStepTruth {
    /// Route key; the intermediate is implied by the first step.
    pub fn key(&self) -> String {
        format!("{}>>{}", sorted_key(&self.first), sorted_key(&self.second))
    }

    pub fn steps(&self) -> Vec<Vec<String>> {
        vec![self.first.clone(), self.second.clone()]
    }
}

/// Anything with a route key and the product it ends at.
pub trait Truth {
    fn route_key(&self) -> String;
    fn target(&self) -> &str;
}

impl Truth for Reaction {
    fn route_key(&self) -> String {
        self.key()
    }
    fn target(&self) -> &str {
        &self.product
    }
}

impl Truth for TwoStepTruth {
    fn route_key(&self) -> String {
        self.key()
    }
    fn target(&self) -> &str {
        &self.target
    }
}

fn canon_list(text: &str, line: usize) -> Result<Vec<String>, RouteError> {
    text.split('.')
        .map(|s| canonical_smiles(s.trim()).map_err(|e| RouteError::Parse { line, msg: format!("{s}: {e}") }))
        .collect()
}

fn split_class(line: &str, n: usize) -> Result<(&str, Option<usize>), RouteError> {
    match line.split_once('\t') {
        None => Ok((line, None)),
        Some((body, c)) => {
            let id = c.trim().parse().map_err(|_| RouteError::Parse { line: n, msg: format!("bad class id {c:?}") })?;
            Ok((body, Some(id)))
        }
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end())).filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

/// `r1.r2>>product`, optionally followed by a tab and a class id.
pub fn parse_reactions(text: &str) -> Result<Vec<Reaction>, RouteError> {
    content_lines(text)
        .map(|(n, line)| {
            let (body, class_id) = split_class(line, n)?;
            let parts: Vec<&str> = body.split(">>").collect();
            if parts.len() != 2 {
                return Err(RouteError::Parse { line: n, msg: "expected reactants>>product".into() });
            }
            let reactants = canon_list(parts[0], n)?;
            let product = canon_list(parts[1], n)?;
            if product.len() != 1 {
                return Err(RouteError::Parse { line: n, msg: "expected one product".into() });
            }
            Ok(Reaction { reactants, product: product.into_iter().next().expect("one"), class_id })
        })
        .collect()
}

/// `r1.r2>>intermediate.r3>>target`: the intermediate comes first in the
/// middle field, followed by the second step's catalog reactants.
pub fn parse_two_step(text: &str) -> Result<Vec<TwoStepTruth>, RouteError> {
    content_lines(text)
        .map(|(n, line)| {
            let (body, class_id) = split_class(line, n)?;
            let parts: Vec<&str> = body.split(">>").collect();
            if parts.len() != 3 {
                return Err(RouteError::Parse { line: n, msg: "expected r>>intermediate.r>>target".into() });
            }
            let first = canon_list(parts[0], n)?;
            let mut mid = canon_list(parts[1], n)?;
            let intermediate = mid.remove(0);
            let target = canon_list(parts[2], n)?;
            if target.len() != 1 {
                return Err(RouteError::Parse { line: n, msg: "expected one target".into() });
            }
            Ok(TwoStepTruth { first, intermediate, second: mid, target: target.into_iter().next().expect("one"), class_id })
        })
        .collect()
}

pub fn format_reactions(rs: &[Reaction]) -> String {
    let mut out = String::new();
    for r in rs {
        let _ = write!(out, "{}>>{}", r.reactants.join("."), r.product);
        if let Some(c) = r.class_id {
            let _ = write!(out, "\t{c}");
        }
        out.push('\n');
    }
    out
}

pub fn format_two_step(ts: &[TwoStepTruth]) -> String {
    let mut out = String::new();
    for t in ts {
        let mut mid = vec![t.intermediate.clone()];
        mid.extend(t.second.iter().cloned());
        let _ = write!(out, "{}>>{}>>{}", t.first.join("."), mid.join("."), t.target);
        if let Some(c) = t.class_id {
            let _ = write!(out, "\t{c}");
        }
        out.push('\n');
    }
    out
}

pub fn load_reactions(path: &Path) -> Result<Vec<Reaction>, RouteError> {
    parse_reactions(&std::fs::read_to_string(path)?)
}

/// Connect every ordered pair of reactions where the first one's product is
/// a reactant of the second. Duplicate route keys are dropped.
pub fn chain_ground_truth(reactions: &[Reaction]) -> Vec<TwoStepTruth> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, a) in reactions.iter().enumerate() {
        for (j, b) in reactions.iter().enumerate() {
            if i == j {
                continue;
            }
            let Some(pos) = b.reactants.iter().position(|r| *r == a.product) else { continue };
            let mut second = b.reactants.clone();
            second.remove(pos);
            let t = TwoStepTruth {
                first: a.reactants.clone(),
                intermediate: a.product.clone(),
                second,
                target: b.product.clone(),
                class_id: b.class_id,
            };
            if seen.insert((t.key(), t.target.clone())) {
                out.push(t);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRoute {
    pub rank: usize,
    pub key: String,
    pub gamma: f64,
    pub alpha: f64,
    pub best_class: usize,
    pub energy: f64,
    pub cluster_id: Option<usize>,
}

/// Order by energy, then γ descending, then key; ranks start at 1.
pub fn rank_routes(entries: Vec<(String, f64, RouteScore)>) -> Vec<RankedRoute> {
    let mut e = entries;
    e.sort_by(|a, b| a.1.total_cmp(&b.1).then(b.2.gamma.total_cmp(&a.2.gamma)).then_with(|| a.0.cmp(&b.0)));
    e.into_iter()
        .enumerate()
        .map(|(i, (key, energy, s))| RankedRoute {
            rank: i + 1,
            key,
            gamma: s.gamma,
            alpha: s.alpha,
            best_class: s.best_class,
            energy,
            cluster_id: None,
        })
        .collect()
}

pub fn write_ranked_csv<W: Write>(routes: &[RankedRoute], w: W) -> Result<(), RouteError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["rank", "key", "gamma", "alpha", "best_class", "energy", "cluster_id"])?;
    for r in routes {
        out.write_record([
            r.rank.to_string(),
            r.key.clone(),
            r.gamma.to_string(),
            r.alpha.to_string(),
            r.best_class.to_string(),
            r.energy.to_string(),
            r.cluster_id.map(|c| c.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_ranked_csv<R: Read>(r: R) -> Result<Vec<RankedRoute>, RouteError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |m: &str| RouteError::Parse { line: i + 2, msg: m.to_string() };
        let num = |j: usize| rec.get(j).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| bad("bad number"));
        out.push(RankedRoute {
            rank: rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad rank"))?,
            key: rec.get(1).ok_or_else(|| bad("missing key"))?.to_string(),
            gamma: num(2)?,
            alpha: num(3)?,
            best_class: rec.get(4).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad class"))?,
            energy: num(5)?,
            cluster_id: rec.get(6).filter(|s| !s.is_empty()).and_then(|s| s.parse().ok()),
        });
    }
    Ok(out)
}

/// Rediscovery metrics of one run, or their average over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub detection_rate: f64,
    pub ground_truth_inclusion: f64,
    /// Hit rates for each N in [`TOP_N`].
    pub top_n_hits: Vec<f64>,
    pub distinct_route_count: f64,
    pub forward_calls: f64,
}

impl EvalSummary {
    pub fn top(&self, n: usize) -> f64 {
        TOP_N.iter().position(|&t| t == n).map(|i| self.top_n_hits[i]).unwrap_or(f64::NAN)
    }

    pub fn mean(runs: &[EvalSummary]) -> EvalSummary {
        let n = runs.len().max(1) as f64;
        let avg = |f: &dyn Fn(&EvalSummary) -> f64| runs.iter().map(f).sum::<f64>() / n;
        EvalSummary {
            detection_rate: avg(&|r| r.detection_rate),
            ground_truth_inclusion: avg(&|r| r.ground_truth_inclusion),
            top_n_hits: (0..TOP_N.len()).map(|i| avg(&|r| r.top_n_hits[i])).collect(),
            distinct_route_count: avg(&|r| r.distinct_route_count),
            forward_calls: avg(&|r| r.forward_calls),
        }
    }

    /// Pooled over runs: a rate counts when any run achieved it.
    pub fn union(runs: &[EvalSummary]) -> EvalSummary {
        let any = |f: &dyn Fn(&EvalSummary) -> f64| if runs.iter().any(|r| f(r) > 0.0) { 1.0 } else { 0.0 };
        EvalSummary {
            detection_rate: any(&|r| r.detection_rate),
            ground_truth_inclusion: any(&|r| r.ground_truth_inclusion),
            top_n_hits: (0..TOP_N.len()).map(|i| any(&|r| r.top_n_hits[i])).collect(),
            distinct_route_count: runs.iter().map(|r| r.distinct_route_count).fold(0.0, f64::max),
            forward_calls: runs.iter().map(|r| r.forward_calls).sum(),
        }
    }
}

/// Score one run against the truths recorded for `target`.
pub fn evaluate<T: Truth>(ranked: &[RankedRoute], truths: &[T], target: &str, forward_calls: u64) -> Result<EvalSummary, RouteError> {
    let keys: BTreeSet<String> = truths.iter().filter(|t| t.target() == target).map(Truth::route_key).collect();
    if keys.is_empty() {
        return Err(RouteError::UnknownTarget(target.to_string()));
    }
    let best_rank = ranked.iter().filter(|r| keys.contains(&r.key)).map(|r| r.rank).min();
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let zero = ranked.iter().filter(|r| r.energy == 0.0).count();
    Ok(EvalSummary {
        detection_rate: flag(zero > 0),
        ground_truth_inclusion: flag(best_rank.is_some()),
        top_n_hits: TOP_N.iter().map(|&n| flag(best_rank.is_some_and(|r| r <= n))).collect(),
        distinct_route_count: zero as f64,
        forward_calls: forward_calls as f64,
    })
}

/// Ground-truth reactions grouped by product.
pub fn by_target(reactions: &[Reaction]) -> BTreeMap<String, Vec<Reaction>> {
    let mut m: BTreeMap<String, Vec<Reaction>> = BTreeMap::new();
    for r in reactions {
        m.entry(r.product.clone()).or_default().push(r.clone());
    }
    m
}
