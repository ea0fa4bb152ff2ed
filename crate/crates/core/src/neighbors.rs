//! Exact k-nearest-neighbor lists over the catalog and the neighbor proposal.

use rand::Rng;
use thiserror::Error;

use retrosmc_chem::{distance, Metric};

use crate::catalog::Catalog;
use crate::space::{Particle, RouteShape};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("catalog of {catalog} entries cannot provide {k} neighbors per entry")]
pub struct NeighborError {
    pub catalog: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    k: usize,
    lists: Vec<Vec<u32>>,
}

impl NeighborIndex {
    /// Pairwise Tanimoto over the whole catalog; lists ascend by distance,
    /// ties by index, self excluded.
    pub fn build(catalog: &Catalog, k: usize) -> Result<Self, NeighborError> {
        let n = catalog.len();
        if k == 0 || n < k + 1 {
            return Err(NeighborError { catalog: n, k });
        }
        let mut lists = Vec::with_capacity(n);
        let mut row: Vec<(f64, u32)> = Vec::with_capacity(n);
        for i in 0..n {
            row.clear();
            for j in 0..n {
                if j != i {
                    let d = distance(catalog.fingerprint(i), catalog.fingerprint(j), Metric::Tanimoto)
                        .expect("catalog fingerprints share a width");
                    row.push((d, j as u32));
                }
            }
            row.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut head: Vec<(f64, u32)> = row[..k].to_vec();
            head.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            lists.push(head.into_iter().map(|(_, j)| j).collect());
        }
        Ok(NeighborIndex { k, lists })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.lists[i]
    }

    /// Pick a slot uniformly, then one of that reactant's neighbors
    /// uniformly; every (slot, neighbor) pair has probability 1/(slots*k).
    pub fn propose<R: Rng + ?Sized>(&self, p: &Particle, shape: &RouteShape, rng: &mut R) -> Particle {
        let slot = rng.random_range(0..p.slots().len());
        let list = &self.lists[p.slots()[slot] as usize];
        let nb = list[rng.random_range(0..list.len())];
        p.with_slot(slot, nb, shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_molecules_list_the_other_two() {
        let cat = Catalog::from_smiles(&["CCO", "CCCO", "c1ccccc1"], Default::default()).unwrap();
        let idx = NeighborIndex::build(&cat, 2).unwrap();
        for i in 0..3 {
            let l = idx.neighbors(i);
            assert_eq!(l.len(), 2);
            assert!(!l.contains(&(i as u32)));
            let d: Vec<f64> = l
                .iter()
                .map(|&j| distance(cat.fingerprint(i), cat.fingerprint(j as usize), Metric::Tanimoto).unwrap())
                .collect();
            assert!(d[0] <= d[1]);
        }
        assert_eq!(NeighborIndex::build(&cat, 3), Err(NeighborError { catalog: 3, k: 3 }));
    }
}
