use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("molecule has no atoms")]
    Empty,
    #[error("bond {bond} references a missing atom")]
    BadEndpoint { bond: usize },
    #[error("atom {atom} is bonded to itself")]
    SelfBond { atom: usize },
    #[error("duplicate bond between atoms {a} and {b}")]
    DuplicateBond { a: usize, b: usize },
    #[error("molecule graph is not connected")]
    Disconnected,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesErrorKind {
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unknown symbol {0:?}")]
    UnknownSymbol(String),
    #[error("unsupported feature: {0}")]
    Unsupported(&'static str),
    #[error("ring closure {0} was never closed")]
    UnclosedRing(u8),
    #[error("conflicting bond orders on ring closure {0}")]
    RingBondConflict(u8),
    #[error("unbalanced parenthesis")]
    UnbalancedParenthesis,
    #[error("bond symbol not followed by an atom")]
    DanglingBond,
    #[error("valence of {element} exceeds {max}")]
    Valence { element: &'static str, max: i32 },
    #[error("multiple components; split on '.' before parsing")]
    MultipleComponents,
    #[error("bad bracket atom: {0}")]
    BadBracket(&'static str),
    #[error("aromatic bond between non-aromatic atoms")]
    AromaticBond,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// A parse failure at a byte offset of the input.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at byte {offset}")]
pub struct SmilesError {
    pub offset: usize,
    pub kind: SmilesErrorKind,
}

impl SmilesError {
    pub(crate) fn new(offset: usize, kind: SmilesErrorKind) -> Self {
        SmilesError { offset, kind }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FingerprintError {
    #[error("fingerprint widths differ: {0} vs {1}")]
    WidthMismatch(u32, u32),
    #[error("cannot augment an empty list of molecules")]
    EmptyAugment,
    #[error("n_bits must be a nonzero power of two, got {0}")]
    BadWidth(u32),
}
