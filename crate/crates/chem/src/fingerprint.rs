//! Hashed circular (ECFP-style) fingerprints and the two distances used as
//! energies.
//!
//! Hydrogen counts are not part of the atom invariant; the dialect has no
//! explicit hydrogens and nothing downstream distinguishes by them.

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::error::FingerprintError;
use crate::graph::MolGraph;
use crate::HASH_SEED;

pub const DEFAULT_RADIUS: u32 = 2;
pub const DEFAULT_BITS: u32 = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Tanimoto,
    Euclidean,
}

/// Bit vector plus sparse occurrence counts over the same index space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    n_bits: u32,
    words: Vec<u64>,
    /// (bit index, count), ascending by index, counts >= 1
    counts: Vec<(u32, u32)>,
}

impl Fingerprint {
    /// Build from sparse counts; bits are derived so the two always agree.
    pub fn from_counts(n_bits: u32, mut counts: Vec<(u32, u32)>) -> Result<Self, FingerprintError> {
        if n_bits == 0 || !n_bits.is_power_of_two() {
            return Err(FingerprintError::BadWidth(n_bits));
        }
        counts.retain(|&(_, c)| c > 0);
        counts.sort_unstable_by_key(|&(i, _)| i);
        counts.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        let mut words = vec![0u64; (n_bits as usize).div_ceil(64)];
        for &(i, _) in &counts {
            assert!(i < n_bits, "bit index {i} out of range");
            words[(i / 64) as usize] |= 1u64 << (i % 64);
        }
        Ok(Fingerprint { n_bits, words, counts })
    }

    pub fn n_bits(&self) -> u32 {
        self.n_bits
    }

    pub fn counts(&self) -> &[(u32, u32)] {
        &self.counts
    }

    pub fn popcount(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn bit(&self, i: u32) -> bool {
        i < self.n_bits && self.words[(i / 64) as usize] & (1u64 << (i % 64)) != 0
    }

    pub fn count(&self, i: u32) -> u32 {
        self.counts
            .binary_search_by_key(&i, |&(k, _)| k)
            .map(|p| self.counts[p].1)
            .unwrap_or(0)
    }

    pub(crate) fn words(&self) -> &[u64] {
        &self.words
    }
}

/// Elementwise sum of member count vectors.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AugmentedFingerprint {
    n_bits: u32,
    counts: Vec<(u32, u32)>,
}

impl AugmentedFingerprint {
    pub fn empty(n_bits: u32) -> Self {
        AugmentedFingerprint { n_bits, counts: Vec::new() }
    }

    pub fn n_bits(&self) -> u32 {
        self.n_bits
    }

    pub fn counts(&self) -> &[(u32, u32)] {
        &self.counts
    }

    /// Add one member's counts in place.
    pub fn add(&mut self, fp: &Fingerprint) -> Result<(), FingerprintError> {
        if fp.n_bits != self.n_bits {
            return Err(FingerprintError::WidthMismatch(self.n_bits, fp.n_bits));
        }
        self.counts = merge_add(&self.counts, &fp.counts);
        Ok(())
    }

    /// Sum of two augmented vectors (used to join route steps).
    pub fn plus(&self, other: &AugmentedFingerprint) -> Result<Self, FingerprintError> {
        if other.n_bits != self.n_bits {
            return Err(FingerprintError::WidthMismatch(self.n_bits, other.n_bits));
        }
        Ok(AugmentedFingerprint { n_bits: self.n_bits, counts: merge_add(&self.counts, &other.counts) })
    }
}

fn merge_add(a: &[(u32, u32)], b: &[(u32, u32)]) -> Vec<(u32, u32)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push((a[i].0, a[i].1 + b[j].1));
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Circular fingerprint with `radius` refinement rounds folded into
/// `n_bits` (a power of two). Every environment identifier at every radius
/// sets its bit and increments its count.
pub fn fingerprint(g: &MolGraph, radius: u32, n_bits: u32) -> Result<Fingerprint, FingerprintError> {
    if n_bits == 0 || !n_bits.is_power_of_two() {
        return Err(FingerprintError::BadWidth(n_bits));
    }
    let n = g.atom_count();
    let mask = u64::from(n_bits - 1);
    let mut ids: Vec<u64> = (0..n)
        .map(|i| {
            let a = g.atoms()[i];
            let bytes = [a.element.atomic_number(), g.degree(i) as u8, a.charge as u8, u8::from(a.aromatic)];
            xxh3_64_with_seed(&bytes, HASH_SEED)
        })
        .collect();
    let mut hits: Vec<u32> = Vec::with_capacity(n * (radius as usize + 1));
    hits.extend(ids.iter().map(|&id| (id & mask) as u32));

    let mut env: Vec<(u8, u64)> = Vec::with_capacity(8);
    let mut buf: Vec<u8> = Vec::with_capacity(128);
    for _ in 0..radius {
        let next: Vec<u64> = (0..n)
            .map(|i| {
                env.clear();
                env.extend(g.neighbors(i).map(|(nb, o)| (o.code(), ids[nb])));
                env.sort_unstable();
                buf.clear();
                buf.extend_from_slice(&ids[i].to_le_bytes());
                for &(o, id) in &env {
                    buf.push(o);
                    buf.extend_from_slice(&id.to_le_bytes());
                }
                xxh3_64_with_seed(&buf, HASH_SEED)
            })
            .collect();
        ids = next;
        hits.extend(ids.iter().map(|&id| (id & mask) as u32));
    }
    hits.sort_unstable();
    let mut counts: Vec<(u32, u32)> = Vec::new();
    for h in hits {
        match counts.last_mut() {
            Some((i, c)) if *i == h => *c += 1,
            _ => counts.push((h, 1)),
        }
    }
    Fingerprint::from_counts(n_bits, counts)
}

/// Tanimoto distance on bits or Euclidean distance on counts.
pub fn distance(a: &Fingerprint, b: &Fingerprint, metric: Metric) -> Result<f64, FingerprintError> {
    if a.n_bits != b.n_bits {
        return Err(FingerprintError::WidthMismatch(a.n_bits, b.n_bits));
    }
    Ok(match metric {
        Metric::Tanimoto => tanimoto_distance(a, b),
        Metric::Euclidean => euclidean_counts(&a.counts, &b.counts),
    })
}

pub(crate) fn tanimoto_distance(a: &Fingerprint, b: &Fingerprint) -> f64 {
    let mut inter = 0u32;
    let mut union = 0u32;
    for (x, y) in a.words().iter().zip(b.words()) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    if union == 0 {
        0.0
    } else {
        1.0 - f64::from(inter) / f64::from(union)
    }
}

fn euclidean_counts(a: &[(u32, u32)], b: &[(u32, u32)]) -> f64 {
    let mut sum = 0f64;
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let (d, step_a, step_b) = match (a.get(i), b.get(j)) {
            (Some(&(ia, ca)), Some(&(ib, cb))) if ia == ib => (f64::from(ca) - f64::from(cb), true, true),
            (Some(&(ia, ca)), Some(&(ib, _))) if ia < ib => (f64::from(ca), true, false),
            (Some(_), Some(&(_, cb))) => (f64::from(cb), false, true),
            (Some(&(_, ca)), None) => (f64::from(ca), true, false),
            (None, Some(&(_, cb))) => (f64::from(cb), false, true),
            (None, None) => unreachable!(),
        };
        sum += d * d;
        i += usize::from(step_a);
        j += usize::from(step_b);
    }
    sum.sqrt()
}

/// Sum of the members' count vectors.
pub fn augment<'a, I>(members: I) -> Result<AugmentedFingerprint, FingerprintError>
where
    I: IntoIterator<Item = &'a Fingerprint>,
{
    let mut iter = members.into_iter();
    let first = iter.next().ok_or(FingerprintError::EmptyAugment)?;
    let mut acc = AugmentedFingerprint { n_bits: first.n_bits, counts: first.counts.clone() };
    for fp in iter {
        acc.add(fp)?;
    }
    Ok(acc)
}

/// Fingerprint and augment a list of molecules.
pub fn augment_graphs(mols: &[MolGraph], radius: u32, n_bits: u32) -> Result<AugmentedFingerprint, FingerprintError> {
    let fps = mols.iter().map(|g| fingerprint(g, radius, n_bits)).collect::<Result<Vec<_>, _>>()?;
    augment(&fps)
}
