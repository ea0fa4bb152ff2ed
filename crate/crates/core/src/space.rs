//! Route shapes, particles and the combinatorial candidate space.
//!
//! A particle holds catalog indices grouped by reaction step. Within a group
//! the indices are kept sorted, so a particle is a multiset per step and
//! equal reactant choices have one representation. Because catalog indices
//! follow byte order of the canonical SMILES, the particle's key string is a
//! function of its slots alone.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::forward::MAX_STEP_REACTANTS;

/// Catalog reactants per step. The first step takes only catalog molecules;
/// later steps add the previous step's product.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct RouteShape(Vec<usize>);

impl RouteShape {
    pub fn new(groups: Vec<usize>) -> Result<Self, String> {
        if groups.is_empty() {
            return Err("route shape needs at least one step".into());
        }
        for (i, &g) in groups.iter().enumerate() {
            let max = if i == 0 { MAX_STEP_REACTANTS } else { MAX_STEP_REACTANTS - 1 };
            if g == 0 || g > max {
                return Err(format!("step {i} takes {g} catalog reactants; allowed 1..={max}"));
            }
        }
        Ok(RouteShape(groups))
    }

    pub fn groups(&self) -> &[usize] {
        &self.0
    }

    pub fn steps(&self) -> usize {
        self.0.len()
    }

    pub fn slot_count(&self) -> usize {
        self.0.iter().sum()
    }

    /// Slot range of step `i`.
    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        let start: usize = self.0[..i].iter().sum();
        start..start + self.0[i]
    }

    /// Whether particles of `self` can be lifted into `to` by adding slots.
    pub fn lifts_to(&self, to: &RouteShape) -> bool {
        self.0.len() <= to.0.len() && self.0.iter().zip(&to.0).all(|(a, b)| a <= b)
    }
}

impl TryFrom<Vec<usize>> for RouteShape {
    type Error = String;

    fn try_from(v: Vec<usize>) -> Result<Self, String> {
        RouteShape::new(v)
    }
}

impl From<RouteShape> for Vec<usize> {
    fn from(s: RouteShape) -> Vec<usize> {
        s.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Particle {
    slots: Vec<u32>,
}

impl Particle {
    /// Sorts each step group; `slots.len()` must match the shape.
    pub fn new(mut slots: Vec<u32>, shape: &RouteShape) -> Self {
        assert_eq!(slots.len(), shape.slot_count(), "particle does not fit its shape");
        for i in 0..shape.steps() {
            slots[shape.range(i)].sort_unstable();
        }
        Particle { slots }
    }

    pub fn slots(&self) -> &[u32] {
        &self.slots
    }

    /// Copy with slot `i` replaced, regrouped.
    pub fn with_slot(&self, i: usize, value: u32, shape: &RouteShape) -> Self {
        let mut slots = self.slots.clone();
        slots[i] = value;
        Particle::new(slots, shape)
    }

    /// Catalog reactants of step `i`.
    pub fn step(&self, shape: &RouteShape, i: usize) -> &[u32] {
        &self.slots[shape.range(i)]
    }

    /// Dedup key: reactants of each step dot-joined, steps joined by `>>`.
    pub fn key(&self, shape: &RouteShape, catalog: &Catalog) -> String {
        let mut out = String::new();
        for i in 0..shape.steps() {
            if i > 0 {
                out.push_str(">>");
            }
            for (j, &s) in self.step(shape, i).iter().enumerate() {
                if j > 0 {
                    out.push('.');
                }
                out.push_str(catalog.smiles(s as usize));
            }
        }
        out
    }

    /// Extend into a larger shape with uniformly drawn extra reactants.
    pub fn lift<R: Rng + ?Sized>(&self, from: &RouteShape, to: &RouteShape, n: usize, rng: &mut R) -> Particle {
        assert!(from.lifts_to(to), "shape {from:?} does not lift to {to:?}");
        let mut slots = Vec::with_capacity(to.slot_count());
        for i in 0..to.steps() {
            let have: &[u32] = if i < from.steps() { self.step(from, i) } else { &[] };
            slots.extend_from_slice(have);
            for _ in have.len()..to.groups()[i] {
                slots.push(rng.random_range(0..n as u32));
            }
        }
        Particle::new(slots, to)
    }
}

/// Number of size-`g` multisets over `n` items.
pub fn multichoose(n: u128, g: usize) -> u128 {
    // C(n+g-1, g), computed incrementally and exactly
    let mut acc: u128 = 1;
    for i in 0..g as u128 {
        acc = acc * (n + i) / (i + 1);
    }
    acc
}

/// All particles of one shape over an `n`-entry catalog.
#[derive(Debug, Clone)]
pub struct CandidateSpace {
    shape: RouteShape,
    n: usize,
    group_sizes: Vec<u128>,
    size: u128,
}

/// Enumerate unvisited particles instead of rejection sampling once the
/// space is this small.
const ENUMERATION_LIMIT: u128 = 4_000_000;

impl CandidateSpace {
    pub fn new(shape: RouteShape, n: usize) -> Self {
        let group_sizes: Vec<u128> = shape.groups().iter().map(|&g| multichoose(n as u128, g)).collect();
        let size = group_sizes.iter().product();
        CandidateSpace { shape, n, group_sizes, size }
    }

    pub fn shape(&self) -> &RouteShape {
        &self.shape
    }

    pub fn catalog_len(&self) -> usize {
        self.n
    }

    pub fn size(&self) -> u128 {
        self.size
    }

    /// The particle at position `idx` of a fixed enumeration order.
    pub fn unrank(&self, mut idx: u128) -> Particle {
        assert!(idx < self.size, "rank out of range");
        let mut slots = Vec::with_capacity(self.shape.slot_count());
        for (gi, &g) in self.shape.groups().iter().enumerate() {
            let local = idx % self.group_sizes[gi];
            idx /= self.group_sizes[gi];
            unrank_multiset(self.n, g, local, &mut slots);
        }
        Particle { slots }
    }

    pub fn uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Particle {
        self.unrank(rng.random_range(0..self.size))
    }

    /// Up to `count` distinct particles drawn uniformly from the particles
    /// not in `visited` and not in `exclude`.
    pub fn draw_unvisited<R: Rng + ?Sized>(
        &self,
        visited: &VisitedSet,
        exclude: &HashSet<Particle>,
        count: usize,
        rng: &mut R,
    ) -> Vec<Particle> {
        if count == 0 {
            return Vec::new();
        }
        let taken = (visited.len() + exclude.len()) as u128;
        let dense = self.size <= ENUMERATION_LIMIT && taken.saturating_mul(2) >= self.size;
        if !dense {
            let mut out = Vec::with_capacity(count);
            let mut fresh: HashSet<Particle> = HashSet::with_capacity(count);
            let mut attempts = 0usize;
            let max_attempts = 64 * count + 1024;
            while out.len() < count && attempts < max_attempts {
                attempts += 1;
                let p = self.uniform(rng);
                if visited.contains(&p) || exclude.contains(&p) || fresh.contains(&p) {
                    continue;
                }
                fresh.insert(p.clone());
                out.push(p);
            }
            if out.len() == count || self.size > ENUMERATION_LIMIT {
                return out;
            }
        }
        // dense regime: enumerate the remainder and sample without replacement
        let pool: Vec<Particle> = (0..self.size)
            .map(|i| self.unrank(i))
            .filter(|p| !visited.contains(p) && !exclude.contains(p))
            .collect();
        let k = count.min(pool.len());
        let picks = sample(rng, pool.len(), k);
        picks.into_iter().map(|i| pool[i].clone()).collect()
    }
}

fn unrank_multiset(n: usize, g: usize, mut idx: u128, out: &mut Vec<u32>) {
    let mut lo = 0usize;
    for remaining in (1..=g).rev() {
        let mut a = lo;
        loop {
            // sequences starting with `a` over values a..n
            let c = multichoose((n - a) as u128, remaining - 1);
            if idx < c {
                break;
            }
            idx -= c;
            a += 1;
        }
        out.push(a as u32);
        lo = a;
    }
}

/// Particles already evaluated by the true model.
#[derive(Debug, Clone, Default)]
pub struct VisitedSet {
    seen: HashSet<Particle>,
}

impl VisitedSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// True when newly inserted.
    pub fn insert(&mut self, p: Particle) -> bool {
        self.seen.insert(p)
    }

    pub fn contains(&self, p: &Particle) -> bool {
        self.seen.contains(p)
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}
