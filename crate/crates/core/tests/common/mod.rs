#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use retrosmc_chem::canonical_smiles;
use retrosmc_core::catalog::Catalog;
use retrosmc_core::forward::{ForwardError, ForwardModel, Prediction, ReactantSet};

const HEADS: [&str; 8] = ["", "O", "N", "S", "OC(=O)", "C(=O)", "c1ccccc1", "C1CC1"];

/// `n` linear molecules written head first: a head group followed by a
/// carbon chain.
pub fn chain_items(n: usize) -> Vec<String> {
    let mut items = Vec::new();
    'outer: for len in 1..=40 {
        for h in HEADS {
            if items.len() == n {
                break 'outer;
            }
            items.push(format!("{h}{}", "C".repeat(len)));
        }
    }
    items
}

pub fn chain_catalog(n: usize) -> Catalog {
    let cat = Catalog::from_smiles(&chain_items(n), Default::default()).unwrap();
    assert_eq!(cat.len(), n);
    cat
}

/// Joins chain molecules end to end in key order: the product of a pair is
/// the first member's head-first spelling followed by the second's. Counts
/// every prediction per reactant set.
pub struct ChainModel {
    spelling: HashMap<String, String>,
    pub calls: AtomicU64,
    pub seen: Mutex<HashMap<String, u32>>,
}

impl ChainModel {
    pub fn new(n: usize) -> Self {
        let spelling = chain_items(n).into_iter().map(|s| (canonical_smiles(&s).unwrap(), s)).collect();
        ChainModel { spelling, calls: AtomicU64::new(0), seen: Mutex::new(HashMap::new()) }
    }

    pub fn product(&self, members: &[String]) -> String {
        let joined: String = members.iter().map(|m| self.spelling[m].as_str()).collect();
        canonical_smiles(&joined).unwrap()
    }

    pub fn max_repeats(&self) -> u32 {
        self.seen.lock().unwrap().values().copied().max().unwrap_or(0)
    }
}

impl ForwardModel for ChainModel {
    fn predict(&self, s: &ReactantSet) -> Result<Prediction, ForwardError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        *self.seen.lock().unwrap().entry(s.key()).or_default() += 1;
        Ok(Prediction { product: Some(self.product(s.members())), alpha: 1.0 })
    }
}
