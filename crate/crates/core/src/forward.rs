//! The forward-prediction contract: a reactant set maps deterministically to
//! a product and a sequence score.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use retrosmc_chem::{canonical_smiles, SmilesError};

/// Score carried by invalid predictions; keeps downstream logs finite.
pub const EPSILON: f64 = 1e-6;

/// Most reactants a single step may take.
pub const MAX_STEP_REACTANTS: usize = 2;

#[derive(Debug, Error)]
pub enum ForwardError {
    #[error("reactant {index} does not parse: {source}")]
    Reactant {
        index: usize,
        #[source]
        source: SmilesError,
    },
    #[error("reactant set must hold 1..={MAX_STEP_REACTANTS} molecules, got {0}")]
    Size(usize),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

/// Reactants of one step, stored canonical and sorted bytewise so equal sets
/// compare equal regardless of input order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ReactantSet {
    members: Vec<String>,
}

impl ReactantSet {
    /// Canonicalize and sort arbitrary SMILES.
    pub fn new<S: AsRef<str>>(members: &[S]) -> Result<Self, ForwardError> {
        if members.is_empty() || members.len() > MAX_STEP_REACTANTS {
            return Err(ForwardError::Size(members.len()));
        }
        let mut out = Vec::with_capacity(members.len());
        for (index, m) in members.iter().enumerate() {
            out.push(canonical_smiles(m.as_ref()).map_err(|source| ForwardError::Reactant { index, source })?);
        }
        out.sort();
        Ok(ReactantSet { members: out })
    }

    /// Trust already-canonical members; only sorts.
    pub fn from_canonical(mut members: Vec<String>) -> Self {
        members.sort();
        ReactantSet { members }
    }

    pub fn members(&self) -> &[String] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Dot-joined members.
    pub fn key(&self) -> String {
        self.members.join(".")
    }
}

/// Product (None is the invalid marker) with its sequence score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub product: Option<String>,
    pub alpha: f64,
}

impl Prediction {
    pub fn invalid() -> Self {
        Prediction { product: None, alpha: EPSILON }
    }

    pub fn is_valid(&self) -> bool {
        self.product.is_some()
    }
}

pub trait ForwardModel: Send + Sync {
    fn predict(&self, s: &ReactantSet) -> Result<Prediction, ForwardError>;

    /// Order-preserving batch; any failure fails the whole batch.
    fn predict_batch(&self, batch: &[ReactantSet]) -> Result<Vec<Prediction>, ForwardError> {
        batch.iter().map(|s| self.predict(s)).collect()
    }
}

impl<M: ForwardModel + ?Sized> ForwardModel for &M {
    fn predict(&self, s: &ReactantSet) -> Result<Prediction, ForwardError> {
        (**self).predict(s)
    }

    fn predict_batch(&self, batch: &[ReactantSet]) -> Result<Vec<Prediction>, ForwardError> {
        (**self).predict_batch(batch)
    }
}

impl<M: ForwardModel + ?Sized> ForwardModel for Box<M> {
    fn predict(&self, s: &ReactantSet) -> Result<Prediction, ForwardError> {
        (**self).predict(s)
    }

    fn predict_batch(&self, batch: &[ReactantSet]) -> Result<Vec<Prediction>, ForwardError> {
        (**self).predict_batch(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reactant_sets_are_order_free() {
        let a = ReactantSet::new(&["OCC", "CBr"]).unwrap();
        let b = ReactantSet::new(&["BrC", "CCO"]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.key(), b.key());
    }

    #[test]
    fn size_limits() {
        assert!(matches!(ReactantSet::new::<&str>(&[]), Err(ForwardError::Size(0))));
        assert!(matches!(ReactantSet::new(&["C", "C", "C"]), Err(ForwardError::Size(3))));
        assert!(matches!(ReactantSet::new(&["C", "C1CC"]), Err(ForwardError::Reactant { index: 1, .. })));
    }
}
