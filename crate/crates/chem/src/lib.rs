//! Chemistry primitives for the retrosynthesis engine: a restricted SMILES
//! dialect, canonical strings, circular fingerprints and mapped rewrites.

mod canon;
mod error;
mod fingerprint;
mod graph;
mod motif;
mod smiles;

/// Seed for every structural hash, fixed so fingerprints and canonical
/// strings are identical across runs and platforms.
pub const HASH_SEED: u64 = 0x51f1_5eed_0b5e_55ed;

pub use canon::{canonical_form, canonicalize};
pub use error::{FingerprintError, GraphError, SmilesError, SmilesErrorKind};
pub use fingerprint::{
    augment, augment_graphs, distance, fingerprint, AugmentedFingerprint, Fingerprint, Metric, DEFAULT_BITS,
    DEFAULT_RADIUS,
};
pub use graph::{Atom, Bond, BondOrder, Element, MolGraph};
pub use motif::{Motif, MotifAtom, MotifError, Rewrite};
pub use smiles::parse_smiles;

/// Parse and canonicalize in one step.
pub fn canonical_smiles(text: &str) -> Result<String, SmilesError> {
    parse_smiles(text).map(|g| canonicalize(&g))
}
