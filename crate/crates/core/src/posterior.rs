//! Boltzmann likelihoods and the deduplicated posterior over every
//! evaluated particle.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use retrosmc_chem::{canonical_smiles, distance, fingerprint, parse_smiles, Fingerprint, Metric, SmilesError};

use crate::catalog::FpParams;
use crate::space::Particle;

#[derive(Debug, Error)]
pub enum PosteriorError {
    #[error("particle {key} re-evaluated with energy {new}, stored {stored}; forward model is not deterministic")]
    Integrity { key: String, stored: f64, new: f64 },
    #[error("posterior CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("posterior CSV row {row}: {msg}")]
    Malformed { row: usize, msg: String },
}

/// Synthesis target with its fingerprint.
#[derive(Debug, Clone)]
pub struct Target {
    smiles: String,
    fp: Fingerprint,
}

impl Target {
    pub fn new(smiles: &str, params: FpParams) -> Result<Self, SmilesError> {
        let canon = canonical_smiles(smiles)?;
        let g = parse_smiles(&canon)?;
        let fp = fingerprint(&g, params.radius, params.n_bits).expect("catalog parameters are valid");
        Ok(Target { smiles: canon, fp })
    }

    /// Assemble from precomputed parts; `smiles` must be canonical.
    pub fn from_parts(smiles: String, fp: Fingerprint) -> Self {
        Target { smiles, fp }
    }

    pub fn smiles(&self) -> &str {
        &self.smiles
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.fp
    }
}

/// Energy metric and the value assigned to invalid predictions under the
/// Euclidean metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySpec {
    pub metric: Metric,
    #[serde(default = "default_cap")]
    pub euclidean_cap: f64,
}

fn default_cap() -> f64 {
    10.0
}

impl Default for EnergySpec {
    fn default() -> Self {
        EnergySpec { metric: Metric::Tanimoto, euclidean_cap: default_cap() }
    }
}

impl EnergySpec {
    pub fn max(&self) -> f64 {
        match self.metric {
            Metric::Tanimoto => 1.0,
            Metric::Euclidean => self.euclidean_cap,
        }
    }

    /// Distance between target and predicted product; `None` is the invalid
    /// marker. A product that is not the target never gets energy 0: if its
    /// fingerprint distance is 0 the count-weighted Jaccard distance is used,
    /// floored at 1/n_bits.
    pub fn energy(&self, target: &Target, product: Option<(&str, &Fingerprint)>) -> f64 {
        let Some((smiles, fp)) = product else {
            return self.max();
        };
        if smiles == target.smiles {
            return 0.0;
        }
        let d = distance(&target.fp, fp, self.metric).expect("fingerprint widths agree");
        let d = d.min(self.max());
        if d > 0.0 {
            return d;
        }
        let j = count_jaccard_distance(&target.fp, fp);
        if j > 0.0 {
            j
        } else {
            1.0 / f64::from(fp.n_bits())
        }
    }
}

fn count_jaccard_distance(a: &Fingerprint, b: &Fingerprint) -> f64 {
    let (mut lo, mut hi) = (0u64, 0u64);
    let (ca, cb) = (a.counts(), b.counts());
    let (mut i, mut j) = (0, 0);
    while i < ca.len() || j < cb.len() {
        match (ca.get(i), cb.get(j)) {
            (Some(&(ia, x)), Some(&(ib, y))) if ia == ib => {
                lo += u64::from(x.min(y));
                hi += u64::from(x.max(y));
                i += 1;
                j += 1;
            }
            (Some(&(ia, x)), Some(&(ib, _))) if ia < ib => {
                hi += u64::from(x);
                i += 1;
            }
            (Some(_), Some(&(_, y))) | (None, Some(&(_, y))) => {
                hi += u64::from(y);
                j += 1;
            }
            (Some(&(_, x)), None) => {
                hi += u64::from(x);
                i += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    if hi == 0 {
        0.0
    } else {
        1.0 - lo as f64 / hi as f64
    }
}

pub fn likelihood(energy: f64, beta: f64) -> f64 {
    (-beta * energy).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub particle: Particle,
    pub energy: f64,
    pub weight: f64,
}

/// Every evaluated particle, keyed by its canonical route key.
#[derive(Debug, Clone)]
pub struct PosteriorTable {
    beta: f64,
    entries: BTreeMap<String, Entry>,
    // Neumaier-compensated running sum of weights
    sum: f64,
    compensation: f64,
}

impl PosteriorTable {
    pub fn new(beta: f64) -> Self {
        PosteriorTable { beta, entries: BTreeMap::new(), sum: 0.0, compensation: 0.0 }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Insert a new key; a repeat must carry the identical energy. Returns
    /// whether the key was new.
    pub fn record(&mut self, key: &str, particle: &Particle, energy: f64) -> Result<bool, PosteriorError> {
        if let Some(e) = self.entries.get(key) {
            if e.energy.to_bits() != energy.to_bits() {
                return Err(PosteriorError::Integrity { key: key.to_string(), stored: e.energy, new: energy });
            }
            return Ok(false);
        }
        let weight = likelihood(energy, self.beta);
        let t = self.sum + weight;
        if self.sum.abs() >= weight.abs() {
            self.compensation += (self.sum - t) + weight;
        } else {
            self.compensation += (weight - t) + self.sum;
        }
        self.sum = t;
        self.entries.insert(key.to_string(), Entry { particle: particle.clone(), energy, weight });
        Ok(true)
    }

    pub fn normalizer(&self) -> f64 {
        self.sum + self.compensation
    }

    pub fn probability(&self, key: &str) -> Option<f64> {
        let z = self.normalizer();
        self.entries.get(key).filter(|_| z > 0.0).map(|e| e.weight / z)
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in key byte order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Entry)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), e))
    }

    /// Highest weights first, ties by key byte order.
    pub fn top_by_weight(&self, n: usize) -> Vec<(&str, &Entry)> {
        let mut all: Vec<(&str, &Entry)> = self.iter().collect();
        all.sort_by(|a, b| b.1.weight.total_cmp(&a.1.weight).then_with(|| a.0.cmp(b.0)));
        all.truncate(n);
        all
    }

    /// Columns key, energy, weight, normalized_probability; rows in key order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), PosteriorError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["key", "energy", "weight", "normalized_probability"])?;
        let z = self.normalizer();
        for (k, e) in &self.entries {
            out.write_record([k.as_str(), &e.energy.to_string(), &e.weight.to_string(), &(e.weight / z).to_string()])?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// One row of a posterior dump.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorRow {
    pub key: String,
    pub energy: f64,
    pub weight: f64,
    pub probability: f64,
}

pub fn read_posterior_csv<R: Read>(r: R) -> Result<Vec<PosteriorRow>, PosteriorError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |j: usize| -> Result<f64, PosteriorError> {
            rec.get(j)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| PosteriorError::Malformed { row: i + 1, msg: format!("column {j} is not a number") })
        };
        let key = rec
            .get(0)
            .ok_or_else(|| PosteriorError::Malformed { row: i + 1, msg: "missing key".into() })?
            .to_string();
        rows.push(PosteriorRow { key, energy: field(1)?, weight: field(2)?, probability: field(3)? });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::RouteShape;

    fn particle(i: u32) -> Particle {
        Particle::new(vec![i], &RouteShape::new(vec![1]).unwrap())
    }

    fn bits(on: &[u32]) -> Fingerprint {
        Fingerprint::from_counts(64, on.iter().map(|&i| (i, 1)).collect()).unwrap()
    }

    #[test]
    fn energy_rules() {
        let spec = EnergySpec::default();
        let t = Target::new("CCOC", FpParams::default()).unwrap();
        let same = t.fingerprint().clone();
        assert_eq!(spec.energy(&t, Some((t.smiles(), &same))), 0.0);
        assert_eq!(spec.energy(&t, None), 1.0);
        let constructed = Target::from_parts("X".into(), bits(&[0, 1, 2]));
        // |a & b| = 1, |a | b| = 4
        let e = spec.energy(&constructed, Some(("Y", &bits(&[2, 9]))));
        assert!((e - 0.75).abs() < 1e-15);
        let euclid = EnergySpec { metric: Metric::Euclidean, euclidean_cap: 10.0 };
        assert_eq!(euclid.energy(&t, None), 10.0);
    }

    #[test]
    fn different_product_with_equal_bits_is_not_zero() {
        let spec = EnergySpec::default();
        let t = Target::from_parts("X".into(), Fingerprint::from_counts(64, vec![(1, 1), (2, 1)]).unwrap());
        let e = spec.energy(&t, Some(("Y", &Fingerprint::from_counts(64, vec![(1, 2), (2, 1)]).unwrap())));
        assert!((e - (1.0 - 2.0 / 3.0)).abs() < 1e-15);
        let e = spec.energy(&t, Some(("Y", t.fingerprint())));
        assert_eq!(e, 1.0 / 64.0);
    }

    #[test]
    fn likelihood_values() {
        assert_eq!(likelihood(0.0, 20.0), 1.0);
        assert_eq!(likelihood(0.7, 0.0), 1.0);
        assert!((likelihood(0.5, 2.0) - 0.367_879_441_171_442_3).abs() < 1e-9);
    }

    #[test]
    fn record_and_normalize() {
        let beta = 20.0;
        let mut t = PosteriorTable::new(beta);
        assert_eq!(t.normalizer(), 0.0);
        assert_eq!(t.probability("a"), None);
        assert!(t.record("a", &particle(0), 0.0).unwrap());
        assert!(t.record("b", &particle(1), std::f64::consts::LN_2 / beta).unwrap());
        assert!(!t.record("a", &particle(0), 0.0).unwrap());
        assert_eq!(t.len(), 2);
        assert!((t.probability("a").unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((t.probability("b").unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!(matches!(t.record("a", &particle(0), 0.5), Err(PosteriorError::Integrity { .. })));
    }

    #[test]
    fn top_by_weight_ties_by_key() {
        let mut t = PosteriorTable::new(1.0);
        t.record("b", &particle(1), 0.3).unwrap();
        t.record("a", &particle(0), 0.3).unwrap();
        t.record("c", &particle(2), 0.1).unwrap();
        let keys: Vec<&str> = t.top_by_weight(10).iter().map(|(k, _)| *k).collect();
        assert_eq!(keys, ["c", "a", "b"]);
        assert_eq!(t.top_by_weight(1).len(), 1);
    }

    #[test]
    fn csv_round_trip() {
        let mut t = PosteriorTable::new(20.0);
        t.record("CCO", &particle(0), 0.123_456_789_012_345_67).unwrap();
        t.record("CCN.CO", &particle(1), 1.0).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let rows = read_posterior_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 2);
        for r in rows {
            let e = t.get(&r.key).unwrap();
            assert_eq!(r.energy, e.energy);
            assert_eq!(r.weight, e.weight);
        }
    }
}
