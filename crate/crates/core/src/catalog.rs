//! Building-block catalog: canonical, deduplicated, byte-sorted, with
//! fingerprints.

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use retrosmc_chem::{canonicalize, fingerprint, parse_smiles, Fingerprint, FingerprintError, SmilesError};

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: SmilesError,
    },
    #[error("catalog is empty")]
    Empty,
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
    #[error("reading catalog: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FpParams {
    pub radius: u32,
    pub n_bits: u32,
}

impl Default for FpParams {
    fn default() -> Self {
        FpParams { radius: retrosmc_chem::DEFAULT_RADIUS, n_bits: retrosmc_chem::DEFAULT_BITS }
    }
}

/// Index order equals byte order of the canonical strings, so index-sorted
/// reactant groups are also key-sorted.
#[derive(Debug, Clone)]
pub struct Catalog {
    smiles: Vec<String>,
    fps: Vec<Fingerprint>,
    params: FpParams,
    digest: String,
}

impl Catalog {
    pub fn from_smiles<S: AsRef<str>>(items: &[S], params: FpParams) -> Result<Self, CatalogError> {
        let mut text = String::new();
        for s in items {
            text.push_str(s.as_ref());
            text.push('\n');
        }
        Self::parse(&text, params)
    }

    /// One SMILES per line. A line whose first non-blank character is `#` is
    /// a comment, as is anything after the first whitespace (`#` alone is the
    /// triple bond). Non-canonical lines are canonicalized with a warning.
    pub fn parse(text: &str, params: FpParams) -> Result<Self, CatalogError> {
        let mut smiles = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split_whitespace().next().unwrap_or("");
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let g = parse_smiles(line).map_err(|source| CatalogError::Parse { line: i + 1, source })?;
            let canon = canonicalize(&g);
            if canon != line {
                log::warn!("catalog line {}: {line} canonicalized to {canon}", i + 1);
            }
            smiles.push(canon);
        }
        if smiles.is_empty() {
            return Err(CatalogError::Empty);
        }
        smiles.sort();
        smiles.dedup();
        let fps = smiles
            .iter()
            .map(|s| fingerprint(&parse_smiles(s).expect("canonical output parses"), params.radius, params.n_bits))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Catalog { smiles, fps, params, digest: sha256_hex(text.as_bytes()) })
    }

    pub fn load(path: &Path, params: FpParams) -> Result<Self, CatalogError> {
        let bytes = std::fs::read(path)?;
        let mut cat = Self::parse(&String::from_utf8_lossy(&bytes), params)?;
        cat.digest = sha256_hex(&bytes);
        Ok(cat)
    }

    pub fn len(&self) -> usize {
        self.smiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.smiles.is_empty()
    }

    pub fn smiles(&self, i: usize) -> &str {
        &self.smiles[i]
    }

    pub fn all_smiles(&self) -> &[String] {
        &self.smiles
    }

    pub fn fingerprint(&self, i: usize) -> &Fingerprint {
        &self.fps[i]
    }

    pub fn params(&self) -> FpParams {
        self.params
    }

    /// SHA-256 of the source text (file bytes when loaded from disk).
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn index_of(&self, canonical: &str) -> Option<usize> {
        self.smiles.binary_search_by(|s| s.as_str().cmp(canonical)).ok()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
